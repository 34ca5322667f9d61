//! Numerical laboratory for the singular anisotropic p-Laplace equation
//!
//! ```text
//! -Σ_i ∂_i(|∂_i u|^{p_i - 2} ∂_i u) = g(x) f(u),   u > 0
//! ```
//!
//! The crate has two halves. The existence half ([`solver`]) computes weak
//! solutions for `f(u) = exp(1/u)` on a box through a ladder of regularized
//! problems and checks the properties of that ladder numerically. The
//! nonexistence half ([`exponents`], [`truncations`], [`stability`]) mechanizes
//! the stability / Caccioppoli machinery used to rule out stable solutions on
//! the whole space, including radius sweeps that exhibit the contradiction.
//!
//! [`grid`] holds the shared tensor-grid discretization.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod exponents;
pub mod grid;
pub mod linalg;
pub mod solver;
pub mod stability;
pub mod truncations;

pub use error::{Error, Result};
pub use exponents::{
    BetaChoice, ExponentData, IntegrabilityThresholds, Nonlinearity, OpenInterval, ProblemSpec,
    Theorem, ThresholdReport,
};
pub use grid::{CutoffSpec, Grid, GridField};
pub use solver::{LadderReport, RegularizationLevel, SolverTolerances, WeightSpec};
pub use stability::{
    CaccioppoliReport, CorollaryCase, NonlinearityEval, StabilityReport, StabilityVariant,
};
pub use truncations::{TruncationPair, TruncationReport};
