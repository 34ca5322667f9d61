//! Stability inequality, Caccioppoli-type estimates and radius sweeps.
//!
//! A positive weak solution of `-Δ_p u = g f(u)` is stable when
//!
//! ```text
//! ∫ W f'(u) φ^2  <=  Σ_i (p_i - 1) ∫ |∂_i u|^{p_i - 2} |∂_i φ|^2
//! ```
//!
//! for every test function `φ`, with `W = 1` or `W = g`. Stable solutions obey
//! integral bounds whose right-hand sides decay in the cutoff radius while the
//! left-hand sides grow; the sweeps here exhibit that contradiction on
//! concrete candidate fields.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exponents::{
    apriori_coefficient, beta_window, gradient_powers, lhs_power, region_memberships, select_beta,
    BetaChoice, ExponentData, Nonlinearity, ProblemSpec, Theorem, ThresholdReport,
};
use crate::grid::{Grid, GridField};
use crate::linalg::{dot, pcg};
use crate::truncations::TruncationPair;

/// The nonlinearity `f` together with `f'`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum NonlinearityEval {
    /// `f(u) = -u^{-δ} - u^{-γ}`
    MixedPower { delta: f64, gamma: f64 },
    /// `f(u) = -e^{1/u}`
    ExpSingular,
    /// `f(u) = e^{1/u}`, the right-hand side of the existence problem.
    ExistenceExp,
    /// `f(u) = slope * u`; a frozen test potential with `f' = slope`.
    Linear { slope: f64 },
}

impl NonlinearityEval {
    pub fn from_spec(spec: &ProblemSpec) -> Self {
        match spec.kind {
            Nonlinearity::MixedPower { delta, gamma } => Self::MixedPower { delta, gamma },
            Nonlinearity::ExpSingular { .. } => Self::ExpSingular,
        }
    }

    pub fn f(&self, u: f64) -> f64 {
        match *self {
            Self::MixedPower { delta, gamma } => -u.powf(-delta) - u.powf(-gamma),
            Self::ExpSingular => -(1.0 / u).exp(),
            Self::ExistenceExp => (1.0 / u).exp(),
            Self::Linear { slope } => slope * u,
        }
    }

    pub fn fprime(&self, u: f64) -> f64 {
        match *self {
            Self::MixedPower { delta, gamma } => {
                delta * u.powf(-delta - 1.0) + gamma * u.powf(-gamma - 1.0)
            }
            Self::ExpSingular => (1.0 / u).exp() / (u * u),
            Self::ExistenceExp => -(1.0 / u).exp() / (u * u),
            Self::Linear { slope } => slope,
        }
    }

    /// Whether `f` is singular at zero (so `u > 0` is required where it is used).
    fn singular(&self) -> bool {
        !matches!(self, Self::Linear { .. })
    }
}

/// Which weight multiplies `f'(u)` in the stability form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum StabilityVariant {
    /// `W = 1`
    AsWritten,
    /// `W = g`
    #[default]
    WeightedByG,
}

fn same_grid(a: &GridField, b: &GridField) -> Result<()> {
    if !Arc::ptr_eq(a.grid(), b.grid()) && a.grid().res() != b.grid().res() {
        return Err(Error::InvalidInput("fields live on different grids".into()));
    }
    if a.values().len() != b.values().len() {
        return Err(Error::InvalidInput("field lengths differ".into()));
    }
    Ok(())
}

fn check_dims(grid: &Grid, e: &ExponentData) -> Result<()> {
    if grid.dim() != e.dim() {
        return Err(Error::InvalidInput(format!(
            "{} exponents for a {}-dimensional grid",
            e.dim(),
            grid.dim()
        )));
    }
    Ok(())
}

/// Errors unless `u > 0` wherever `mask` is nonzero.
fn require_positive(u: &GridField, mask: &GridField) -> Result<()> {
    for (j, (uv, mv)) in u.values().iter().zip(mask.values()).enumerate() {
        if *mv != 0.0 && !(*uv > 0.0) {
            return Err(Error::Singularity { node: j, value: *uv });
        }
    }
    Ok(())
}

fn require_compact(phi: &GridField) -> Result<()> {
    let g = phi.grid();
    for (j, v) in phi.values().iter().enumerate() {
        if !g.is_interior(j) && *v != 0.0 {
            return Err(Error::InvalidInput(format!(
                "test function is nonzero ({v}) at boundary node {j}"
            )));
        }
    }
    Ok(())
}

/// `Σ_i ∫ |∂_i u|^{p_i-2} ∂_i u ∂_i φ - ∫ g f(u) φ`.
pub fn weak_residual(
    u: &GridField,
    phi: &GridField,
    nl: &NonlinearityEval,
    g: &GridField,
    e: &ExponentData,
) -> Result<f64> {
    same_grid(u, phi)?;
    same_grid(u, g)?;
    check_dims(u.grid(), e)?;
    require_compact(phi)?;
    if nl.singular() {
        require_positive(u, phi)?;
    }
    let lhs = crate::solver::flux_pairing(u, phi, e.p());
    let w = u.grid().node_weights();
    let rhs: f64 = (0..w.len())
        .filter(|&j| phi.values()[j] != 0.0)
        .map(|j| w[j] * g.values()[j] * nl.f(u.values()[j]) * phi.values()[j])
        .sum();
    Ok(lhs - rhs)
}

/// Face coefficients `(p_i - 1) |D_i u|^{p_i - 2}` of the stability form.
/// For `p_i = 2` the coefficient is 1 everywhere.
fn form_coefficients(u: &GridField, p: &[f64]) -> Vec<Vec<f64>> {
    let g = u.grid();
    let uv = u.values();
    p.iter()
        .enumerate()
        .map(|(axis, &pi)| {
            let s = g.stride(axis);
            let inv_h = 1.0 / g.h()[axis];
            let fw = g.face_weights(axis);
            (0..g.len())
                .map(|j| {
                    if fw[j] == 0.0 {
                        0.0
                    } else if pi == 2.0 {
                        1.0
                    } else {
                        (pi - 1.0) * ((uv[j + s] - uv[j]) * inv_h).abs().powf(pi - 2.0)
                    }
                })
                .collect()
        })
        .collect()
}

/// Node potential `w_j W_j f'(u_j)` (quadrature weight included).
fn potential(
    u: &GridField,
    nl: &NonlinearityEval,
    g: &GridField,
    variant: StabilityVariant,
) -> Vec<f64> {
    let grid = u.grid();
    let w = grid.node_weights();
    (0..grid.len())
        .map(|j| {
            if !grid.is_interior(j) {
                return 0.0;
            }
            let weight = match variant {
                StabilityVariant::AsWritten => 1.0,
                StabilityVariant::WeightedByG => g.values()[j],
            };
            if weight == 0.0 {
                0.0
            } else {
                w[j] * weight * nl.fprime(u.values()[j])
            }
        })
        .collect()
}

/// `y = K x` for the stiffness form with face coefficients `c`.
fn stiffness_apply(grid: &Grid, coeffs: &[Vec<f64>], x: &[f64], y: &mut [f64]) {
    y.iter_mut().for_each(|v| *v = 0.0);
    for (axis, c) in coeffs.iter().enumerate() {
        let s = grid.stride(axis);
        let inv_h2 = 1.0 / (grid.h()[axis] * grid.h()[axis]);
        let fw = grid.face_weights(axis);
        for j in 0..grid.len() {
            if fw[j] > 0.0 {
                let flux = fw[j] * c[j] * (x[j + s] - x[j]) * inv_h2;
                y[j] -= flux;
                y[j + s] += flux;
            }
        }
    }
}

fn stiffness_diag(grid: &Grid, coeffs: &[Vec<f64>]) -> Vec<f64> {
    let mut d = vec![0.0; grid.len()];
    for (axis, c) in coeffs.iter().enumerate() {
        let s = grid.stride(axis);
        let inv_h2 = 1.0 / (grid.h()[axis] * grid.h()[axis]);
        let fw = grid.face_weights(axis);
        for j in 0..grid.len() {
            if fw[j] > 0.0 {
                d[j] += fw[j] * c[j] * inv_h2;
                d[j + s] += fw[j] * c[j] * inv_h2;
            }
        }
    }
    d
}

/// `Σ_i (p_i - 1) ∫ |∂_i u|^{p_i - 2} |∂_i φ|^2 - ∫ W f'(u) φ^2`.
pub fn stability_gap(
    u: &GridField,
    phi: &GridField,
    nl: &NonlinearityEval,
    g: &GridField,
    e: &ExponentData,
    variant: StabilityVariant,
) -> Result<f64> {
    same_grid(u, phi)?;
    same_grid(u, g)?;
    check_dims(u.grid(), e)?;
    require_compact(phi)?;
    if nl.singular() {
        require_positive(u, phi)?;
    }
    let grid = u.grid();
    let coeffs = form_coefficients(u, e.p());
    let mut kx = vec![0.0; grid.len()];
    stiffness_apply(grid, &coeffs, phi.values(), &mut kx);
    let x = phi.values();
    let stiff = dot(x, &kx);
    let pot = potential_masked(u, nl, g, variant, phi);
    let mass: f64 = (0..x.len()).map(|j| pot[j] * x[j] * x[j]).sum();
    Ok(stiff - mass)
}

/// [`potential`] restricted to the support of `phi` (so `f'` is never
/// evaluated where `u` may vanish).
fn potential_masked(
    u: &GridField,
    nl: &NonlinearityEval,
    g: &GridField,
    variant: StabilityVariant,
    phi: &GridField,
) -> Vec<f64> {
    let full = potential_guarded(u, nl, g, variant, |j| phi.values()[j] != 0.0);
    full
}

fn potential_guarded(
    u: &GridField,
    nl: &NonlinearityEval,
    g: &GridField,
    variant: StabilityVariant,
    active: impl Fn(usize) -> bool,
) -> Vec<f64> {
    let mut pot = potential(u, nl, g, variant);
    for (j, v) in pot.iter_mut().enumerate() {
        if !active(j) {
            *v = 0.0;
        }
    }
    pot
}

/// Parameters of the inverse iteration behind [`stability_index`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 5000,
        }
    }
}

/// Smallest value of the stability quotient over the discrete test space.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StabilityReport {
    /// Smallest generalized eigenvalue of `(K - M, B)`, i.e. the minimum of
    /// `stability_gap(φ) / ∫ φ^2`.
    pub gap: f64,
    pub stable: bool,
    pub variant: StabilityVariant,
    pub minimizer: String,
    pub iterations: usize,
    /// `‖(K - M)φ - gap Bφ‖ / ‖Bφ‖` at the returned eigenvector.
    pub residual: f64,
    #[serde(skip)]
    pub eigenvector: Option<GridField>,
}

/// Minimizes the stability quotient over all grid functions vanishing on the
/// boundary: the smallest eigenvalue of `(K - M) φ = σ B φ`, with `K` the
/// frozen stiffness form, `M` the potential `W f'(u)` and `B` the lumped mass.
///
/// Inverse iteration runs on `K - M + s B` with `s = max(W f') + ε`, which is
/// positive definite because `K` is nonnegative.
pub fn stability_index(
    u: &GridField,
    nl: &NonlinearityEval,
    g: &GridField,
    e: &ExponentData,
    variant: StabilityVariant,
    opts: &EigenOptions,
) -> Result<StabilityReport> {
    same_grid(u, g)?;
    check_dims(u.grid(), e)?;
    let grid = u.grid().clone();
    let mask = grid.interior_mask().to_vec();
    if nl.singular() {
        let inside = GridField::from_fn_dirichlet(&grid, |_| 1.0);
        require_positive(u, &inside)?;
    }
    if !mask.iter().any(|m| *m) {
        return Err(Error::InvalidInput("grid has no interior nodes".into()));
    }
    let n = grid.len();
    let w = grid.node_weights();
    let coeffs = form_coefficients(u, e.p());
    let pot = potential(u, nl, g, variant);
    let max_rel = (0..n)
        .filter(|&j| mask[j])
        .map(|j| pot[j] / w[j])
        .fold(f64::NEG_INFINITY, f64::max);
    let shift = max_rel.max(0.0) + 1e-6 * (1.0 + max_rel.abs());
    let kd = stiffness_diag(&grid, &coeffs);
    let diag: Vec<f64> = (0..n).map(|j| kd[j] - pot[j] + shift * w[j]).collect();
    let shifted = |x: &[f64], y: &mut [f64]| {
        stiffness_apply(&grid, &coeffs, x, y);
        for j in 0..n {
            y[j] += (shift * w[j] - pot[j]) * x[j];
        }
    };

    let b_norm = |x: &[f64]| (0..n).map(|j| w[j] * x[j] * x[j]).sum::<f64>().sqrt();
    let mut x: Vec<f64> = (0..n).map(|j| if mask[j] { 1.0 } else { 0.0 }).collect();
    let nx = b_norm(&x);
    x.iter_mut().for_each(|v| *v /= nx);

    let rayleigh = |x: &[f64]| {
        let mut y = vec![0.0; n];
        stiffness_apply(&grid, &coeffs, x, &mut y);
        let top: f64 = dot(x, &y) - (0..n).map(|j| pot[j] * x[j] * x[j]).sum::<f64>();
        let bottom: f64 = (0..n).map(|j| w[j] * x[j] * x[j]).sum();
        (top / bottom, y)
    };

    let (mut sigma, _) = rayleigh(&x);
    let mut y = vec![0.0; n];
    let mut iterations = 0;
    let mut converged = false;
    for it in 1..=opts.max_iter {
        iterations = it;
        let rhs: Vec<f64> = (0..n).map(|j| w[j] * x[j]).collect();
        let rnorm = dot(&rhs, &rhs).sqrt();
        pcg(
            shifted,
            &rhs,
            &mut y,
            &diag,
            &mask,
            |r| dot(r, r).sqrt() <= 1e-13 * rnorm,
            |_, _| {},
            20 * n + 100,
        );
        let ny = b_norm(&y);
        if !(ny > 0.0) || !ny.is_finite() {
            return Err(Error::NonConvergence {
                what: "stability inverse iteration".into(),
                iterations: it,
                residual: f64::NAN,
            });
        }
        x.iter_mut().zip(&y).for_each(|(a, b)| *a = b / ny);
        let (s_new, _) = rayleigh(&x);
        let change = (s_new - sigma).abs();
        sigma = s_new;
        if change <= opts.tol * sigma.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    let (_, kx) = rayleigh(&x);
    let mut res2 = 0.0;
    let mut bx2 = 0.0;
    for j in 0..n {
        if mask[j] {
            let bx = w[j] * x[j];
            let r = kx[j] - pot[j] * x[j] - sigma * bx;
            res2 += r * r;
            bx2 += bx * bx;
        }
    }
    let residual = (res2 / bx2).sqrt();
    if !converged {
        return Err(Error::NonConvergence {
            what: "stability inverse iteration".into(),
            iterations,
            residual,
        });
    }
    // fix the sign so the minimizer is reported positive
    let sum: f64 = x.iter().sum();
    if sum < 0.0 {
        x.iter_mut().for_each(|v| *v = -*v);
    }
    let peak = x
        .iter()
        .enumerate()
        .fold((0, 0.0f64), |m, (j, v)| if v.abs() > m.1 { (j, v.abs()) } else { m });
    let at = grid.coords(peak.0);
    Ok(StabilityReport {
        gap: sigma,
        stable: sigma >= 0.0,
        variant,
        minimizer: format!(
            "lowest generalized eigenvector (unit mass norm), peak at {:?}",
            &at[..grid.dim()]
        ),
        iterations,
        residual,
        eigenvector: Some(GridField::from_values(&grid, x)?),
    })
}

/// Two sides of a Caccioppoli-type estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CaccioppoliReport {
    pub lhs: f64,
    pub rhs: f64,
    pub alpha: Option<f64>,
    pub epsilon: Option<f64>,
    pub beta: Option<f64>,
    pub k: Option<u32>,
    pub satisfied: bool,
    /// The multiplicative constant at which the inequality becomes an equality.
    pub constant_threshold: Option<f64>,
    /// Whether the case's range condition on `u` holds on the cutoff support.
    pub range_condition: Option<bool>,
    pub first_violating_r: Option<f64>,
}

/// Both sides of the a priori estimate for a stable solution:
///
/// ```text
/// ∫ g u f'(u) b(u) ψ^q
///   <=  C Σ_i ∫ u^{p_i - α - 1} |∂_i ψ|^{p_i} ψ^{q - p_i}
///       - (α-1)^2 (N(q-1) + ε) / (4α(1-ε)) ∫ g f(u) b(u) ψ^q
/// ```
///
/// with `b = b_k` for `k = Some(k)` and `b(t) = t^{-α}` otherwise. The gradient
/// term is evaluated on faces with `u`, `ψ` averaged across the face and is
/// zero wherever `ψ` vanishes.
#[allow(clippy::too_many_arguments)]
pub fn apriori_sides(
    u: &GridField,
    psi: &GridField,
    alpha: f64,
    epsilon: f64,
    k: Option<u32>,
    nl: &NonlinearityEval,
    g: &GridField,
    e: &ExponentData,
    cconst: f64,
) -> Result<CaccioppoliReport> {
    same_grid(u, psi)?;
    same_grid(u, g)?;
    check_dims(u.grid(), e)?;
    if !(alpha > e.p_max() - 1.0) || !(alpha > 1.0) {
        return Err(Error::InvalidParameters(format!(
            "alpha = {alpha} must exceed max(p_N - 1, 1) = {}",
            (e.p_max() - 1.0).max(1.0)
        )));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidParameters(format!("epsilon = {epsilon} must lie in (0, 1)")));
    }
    if let Some(bad) = psi.values().iter().find(|v| !(**v >= 0.0 && **v <= 1.0)) {
        return Err(Error::InvalidParameters(format!("cutoff value {bad} outside [0, 1]")));
    }
    require_compact(psi)?;
    require_positive(u, psi)?;
    let trunc = match k {
        Some(k) => Some(TruncationPair::new(k, alpha, e.p_max())?),
        None => None,
    };
    let b = |t: f64| match &trunc {
        Some(tp) => tp.b_unchecked(t),
        None => t.powf(-alpha),
    };

    let grid = u.grid();
    let q = e.q();
    let w = grid.node_weights();
    let (uv, pv, gv) = (u.values(), psi.values(), g.values());
    let mut lhs = 0.0;
    let mut f_term = 0.0;
    for j in 0..grid.len() {
        if pv[j] != 0.0 && gv[j] != 0.0 {
            let bq = b(uv[j]) * pv[j].powf(q);
            lhs += w[j] * gv[j] * uv[j] * nl.fprime(uv[j]) * bq;
            f_term += w[j] * gv[j] * nl.f(uv[j]) * bq;
        }
    }
    let mut grad_term = 0.0;
    for (axis, &pi) in e.p().iter().enumerate() {
        let s = grid.stride(axis);
        let inv_h = 1.0 / grid.h()[axis];
        let fw = grid.face_weights(axis);
        for j in 0..grid.len() {
            if fw[j] == 0.0 {
                continue;
            }
            let pm = 0.5 * (pv[j] + pv[j + s]);
            if pm == 0.0 {
                continue;
            }
            let dpsi = ((pv[j + s] - pv[j]) * inv_h).abs();
            if dpsi == 0.0 {
                continue;
            }
            let um = 0.5 * (uv[j] + uv[j + s]);
            grad_term += fw[j] * um.powf(pi - alpha - 1.0) * dpsi.powf(pi) * pm.powf(q - pi);
        }
    }
    let coef = apriori_coefficient(alpha, epsilon, e.dim(), q);
    let rhs = cconst * grad_term - coef * f_term;
    let constant_threshold = (grad_term > 0.0).then(|| (lhs + coef * f_term) / grad_term);
    Ok(CaccioppoliReport {
        lhs,
        rhs,
        alpha: Some(alpha),
        epsilon: Some(epsilon),
        beta: None,
        k,
        satisfied: lhs <= rhs,
        constant_threshold,
        range_condition: None,
        first_violating_r: None,
    })
}

/// Which consequence of the a priori estimate is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CorollaryCase {
    /// Mixed power, `0 < u <= 1`, exponent built from `δ`.
    #[serde(rename = "C5_2_1")]
    SmallSolutions,
    /// Mixed power, `u >= 1`, exponent built from `γ`.
    #[serde(rename = "C5_2_2")]
    LargeSolutions,
    /// Mixed power with `δ = γ`, any `u > 0`.
    #[serde(rename = "C5_2_3")]
    EqualExponents,
    /// Exponential nonlinearity, `0 < u <= M`.
    #[serde(rename = "C5_3")]
    Capped,
}

impl CorollaryCase {
    pub fn theorem(&self) -> Theorem {
        match self {
            Self::SmallSolutions => Theorem::SmallSolutions,
            Self::LargeSolutions => Theorem::LargeSolutions,
            Self::EqualExponents => Theorem::EqualExponents,
            Self::Capped => Theorem::ExpCapped,
        }
    }

    pub fn for_theorem(t: Theorem) -> Option<Self> {
        match t {
            Theorem::SmallSolutions => Some(Self::SmallSolutions),
            Theorem::LargeSolutions => Some(Self::LargeSolutions),
            Theorem::EqualExponents => Some(Self::EqualExponents),
            Theorem::ExpCapped => Some(Self::Capped),
            Theorem::None => None,
        }
    }

    fn range_ok(&self, u: f64, spec: &ProblemSpec) -> bool {
        match self {
            Self::SmallSolutions => u > 0.0 && u <= 1.0,
            Self::LargeSolutions => u >= 1.0,
            Self::EqualExponents => u > 0.0,
            Self::Capped => match spec.kind {
                Nonlinearity::ExpSingular { cap } => u > 0.0 && u <= cap,
                _ => false,
            },
        }
    }
}

fn check_window(beta: f64, spec: &ProblemSpec) -> Result<()> {
    let (lo, hi) = beta_window(spec)?;
    if !(beta > lo && beta < hi) {
        return Err(Error::OutOfWindow {
            beta,
            lower: lo,
            upper: hi,
        });
    }
    Ok(())
}

/// `ln Σ exp(x)` over the finite entries, `-inf` when there are none.
fn log_sum_exp(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.filter(|x| *x > f64::NEG_INFINITY).collect();
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `ln ∫ g (ψ/u)^E`, summed in log space so large `E` cannot overflow.
fn log_weighted_power(u: &GridField, psi: &GridField, g: &GridField, power: f64) -> f64 {
    let w = u.grid().node_weights();
    let (uv, pv, gv) = (u.values(), psi.values(), g.values());
    log_sum_exp((0..w.len()).map(|j| {
        if pv[j] > 0.0 && gv[j] > 0.0 && w[j] > 0.0 {
            (w[j] * gv[j]).ln() + power * (pv[j].ln() - uv[j].ln())
        } else {
            f64::NEG_INFINITY
        }
    }))
}

/// `Σ_i ∫ |∂_i ψ|^{s_i}` with face quadrature.
fn gradient_integrals(psi: &GridField, powers: &[f64]) -> f64 {
    let grid = psi.grid();
    let pv = psi.values();
    let mut total = 0.0;
    for (axis, &s_i) in powers.iter().enumerate() {
        let s = grid.stride(axis);
        let inv_h = 1.0 / grid.h()[axis];
        let fw = grid.face_weights(axis);
        for j in 0..grid.len() {
            if fw[j] > 0.0 {
                let d = ((pv[j + s] - pv[j]) * inv_h).abs();
                if d > 0.0 {
                    total += fw[j] * d.powf(s_i);
                }
            }
        }
    }
    total
}

/// Both sides of `∫ g (ψ/u)^E <= C Σ_i ∫ |∂_i ψ|^{s_i}` for the case's
/// exponents at `beta`. The range condition on `u` is reported, not enforced.
#[allow(clippy::too_many_arguments)]
pub fn corollary_sides(
    u: &GridField,
    psi: &GridField,
    g: &GridField,
    spec: &ProblemSpec,
    beta: f64,
    case: CorollaryCase,
    cconst: f64,
) -> Result<CaccioppoliReport> {
    same_grid(u, psi)?;
    same_grid(u, g)?;
    check_dims(u.grid(), &spec.exponents)?;
    check_window(beta, spec)?;
    if let Some(bad) = psi.values().iter().find(|v| !(**v >= 0.0 && **v <= 1.0)) {
        return Err(Error::InvalidParameters(format!("cutoff value {bad} outside [0, 1]")));
    }
    require_positive(u, psi)?;
    let theorem = case.theorem();
    let power = lhs_power(beta, spec, theorem)?;
    let grads = gradient_powers(beta, spec, theorem)?;
    let lhs = log_weighted_power(u, psi, g, power).exp();
    let grad = gradient_integrals(psi, &grads);
    let rhs = cconst * grad;
    let range_condition = u
        .values()
        .iter()
        .zip(psi.values())
        .filter(|(_, p)| **p != 0.0)
        .all(|(uv, _)| case.range_ok(*uv, spec));
    Ok(CaccioppoliReport {
        lhs,
        rhs,
        alpha: None,
        epsilon: None,
        beta: Some(beta),
        k: None,
        satisfied: lhs <= rhs,
        constant_threshold: (grad > 0.0).then(|| lhs / grad),
        range_condition: Some(range_condition),
        first_violating_r: None,
    })
}

/// One radius of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SweepRow {
    pub r: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SweepReport {
    pub theorem: Theorem,
    pub beta: f64,
    pub lhs_power: f64,
    pub decay_exponents: Vec<f64>,
    pub constant: f64,
    pub rows: Vec<SweepRow>,
    pub first_violating_r: Option<f64>,
    /// Least-squares slope of `ln(lhs/rhs)` against `ln R`.
    pub ratio_slope: f64,
    /// Least-squares slope of `ln lhs` against `ln R`.
    pub lhs_slope: f64,
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("R,lhs,rhs,ratio\n");
        for r in &self.rows {
            s.push_str(&format!("{:e},{:e},{:e},{:e}\n", r.r, r.lhs, r.rhs, r.ratio));
        }
        s
    }
}

/// Geometrically spaced radii from `r0` to `r1` inclusive.
pub fn geometric_radii(r0: f64, r1: f64, count: usize) -> Vec<f64> {
    if count < 2 {
        return vec![r0];
    }
    let ratio = (r1 / r0).ln() / (count - 1) as f64;
    (0..count).map(|i| r0 * (ratio * i as f64).exp()).collect()
}

/// Quadrature weights of the indicator of `B_R(center)`: each node's dual cell
/// volume times the fraction of the cell inside the ball, estimated with
/// `sub^N` midpoint samples for cells cut by the sphere.
pub fn ball_weights(grid: &Grid, center: &[f64], radius: f64, sub: usize) -> Vec<f64> {
    let dim = grid.dim();
    let h = grid.h();
    let half_diag = 0.5 * h[..dim].iter().map(|v| v * v).sum::<f64>().sqrt();
    let w = grid.node_weights();
    (0..grid.len())
        .into_par_iter()
        .map(|j| {
            let x = grid.coords(j);
            let r = (0..dim).map(|i| (x[i] - center[i]).powi(2)).sum::<f64>().sqrt();
            if r + half_diag <= radius {
                return w[j];
            }
            if r - half_diag >= radius {
                return 0.0;
            }
            // dual cell clipped to the box
            let mut lo = [0.0; 3];
            let mut len = [0.0; 3];
            for i in 0..dim {
                let a = (x[i] - 0.5 * h[i]).max(grid.lo()[i]);
                let b = (x[i] + 0.5 * h[i]).min(grid.hi()[i]);
                lo[i] = a;
                len[i] = b - a;
            }
            let total = sub.pow(dim as u32);
            let mut inside = 0usize;
            for m in 0..total {
                let mut rem = m;
                let mut d2 = 0.0;
                for i in 0..dim {
                    let k = rem % sub;
                    rem /= sub;
                    let y = lo[i] + (k as f64 + 0.5) / sub as f64 * len[i];
                    d2 += (y - center[i]).powi(2);
                }
                if d2 <= radius * radius {
                    inside += 1;
                }
            }
            w[j] * inside as f64 / total as f64
        })
        .collect()
}

fn box_center(grid: &Grid) -> Vec<f64> {
    (0..grid.dim()).map(|i| 0.5 * (grid.lo()[i] + grid.hi()[i])).collect()
}

fn lsq_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// For each `R`, compares `∫_{B_R} g u^{-E}` with `C Σ_i R^{N - s_i}` where
/// `E` and `s_i` are the theorem's exponents at `beta` (balls centered in the
/// box). Returns the table, the first violating radius and fitted slopes.
#[allow(clippy::too_many_arguments)]
pub fn radius_sweep(
    u: &GridField,
    g: &GridField,
    spec: &ProblemSpec,
    beta: f64,
    theorem: Theorem,
    radii: &[f64],
    cconst: f64,
) -> Result<SweepReport> {
    same_grid(u, g)?;
    let grid = u.grid();
    check_dims(grid, &spec.exponents)?;
    check_window(beta, spec)?;
    if radii.len() < 2 {
        return Err(Error::InvalidParameters("a sweep needs at least two radii".into()));
    }
    if radii.windows(2).any(|w| !(w[1] > w[0])) || !(radii[0] > 0.0) {
        return Err(Error::InvalidParameters(format!(
            "radii must be positive and increasing: {radii:?}"
        )));
    }
    if !(cconst > 0.0) {
        return Err(Error::InvalidParameters(format!("constant {cconst} must be positive")));
    }
    let center = box_center(grid);
    let r_max = *radii.last().unwrap();
    if !grid.contains_ball(&center, 2.0 * r_max) {
        return Err(Error::Geometry(format!(
            "B_2R with R = {r_max} does not fit in the box {:?}..{:?}",
            grid.lo(),
            grid.hi()
        )));
    }
    let power = lhs_power(beta, spec, theorem)?;
    if !(power > 0.0) {
        return Err(Error::InvalidParameters(format!(
            "left-hand exponent E = {power} must be positive"
        )));
    }
    let grads = gradient_powers(beta, spec, theorem)?;
    let n = grid.dim() as f64;
    let decay: Vec<f64> = grads.iter().map(|s| n - s).collect();
    let ball = GridField::from_fn(grid, |_| 1.0);
    let inside = ball_weights(grid, &center, r_max, 1);
    let support = GridField::from_values(
        grid,
        inside.iter().map(|v| if *v > 0.0 { 1.0 } else { 0.0 }).collect(),
    )?;
    drop(ball);
    require_positive(u, &support)?;

    let uv = u.values();
    let gv = g.values();
    let rows: Vec<SweepRow> = radii
        .par_iter()
        .map(|&r| {
            let bw = ball_weights(grid, &center, r, 8);
            let log_lhs = log_sum_exp((0..bw.len()).map(|j| {
                if bw[j] > 0.0 && gv[j] > 0.0 {
                    (bw[j] * gv[j]).ln() - power * uv[j].ln()
                } else {
                    f64::NEG_INFINITY
                }
            }));
            let lhs = log_lhs.exp();
            let rhs = cconst * decay.iter().map(|d| r.powf(*d)).sum::<f64>();
            SweepRow {
                r,
                lhs,
                rhs,
                ratio: lhs / rhs,
            }
        })
        .collect();
    let first_violating_r = rows.iter().find(|row| row.lhs > row.rhs).map(|row| row.r);
    let lr: Vec<f64> = rows.iter().map(|row| row.r.ln()).collect();
    let ratio_slope = lsq_slope(&lr, &rows.iter().map(|row| row.ratio.ln()).collect::<Vec<_>>());
    let lhs_slope = lsq_slope(&lr, &rows.iter().map(|row| row.lhs.ln()).collect::<Vec<_>>());
    Ok(SweepReport {
        theorem,
        beta,
        lhs_power: power,
        decay_exponents: decay,
        constant: cconst,
        rows,
        first_violating_r,
        ratio_slope,
        lhs_slope,
    })
}

/// Hypothesis check, parameter choice and sweep for one candidate solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct NonexistenceCertificate {
    pub thresholds: ThresholdReport,
    pub beta: BetaChoice,
    pub sweep: SweepReport,
    pub first_violating_r: Option<f64>,
    pub conclusion: String,
}

/// Refuses unless some theorem's hypotheses hold; otherwise selects `beta`
/// and sweeps the candidate `u`.
pub fn nonexistence_certificate(
    spec: &ProblemSpec,
    u: &GridField,
    g: &GridField,
    cconst: f64,
    radii: &[f64],
) -> Result<NonexistenceCertificate> {
    let thresholds = region_memberships(spec);
    if thresholds.theorem_applicable == Theorem::None {
        let why = if thresholds.notes.is_empty() {
            "region hypotheses fail".to_string()
        } else {
            thresholds.notes.join("; ")
        };
        return Err(Error::NotApplicable(why));
    }
    let beta = select_beta(spec)?;
    let sweep = radius_sweep(u, g, spec, beta.beta, beta.theorem, radii, cconst)?;
    let first = sweep.first_violating_r;
    let conclusion = match first {
        Some(r) => format!(
            "candidate cannot satisfy the Caccioppoli consequence of stability beyond R = {r} with constant {cconst}"
        ),
        None => format!(
            "no violation up to R = {} with constant {cconst}; ratio slope {:.4}",
            radii.last().unwrap(),
            sweep.ratio_slope
        ),
    };
    Ok(NonexistenceCertificate {
        thresholds,
        beta,
        sweep,
        first_violating_r: first,
        conclusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn line(res: usize) -> Arc<Grid> {
        Grid::new(vec![0.0], vec![PI], vec![res]).unwrap()
    }

    #[test]
    fn zero_test_function() {
        let g = line(32);
        let e = ExponentData::new(vec![2.0]).unwrap();
        let u = GridField::constant(&g, 1.0);
        let one = GridField::constant(&g, 1.0);
        let z = GridField::zeros(&g);
        let nl = NonlinearityEval::MixedPower { delta: 1.0, gamma: 2.0 };
        assert_eq!(weak_residual(&u, &z, &nl, &one, &e).unwrap(), 0.0);
        assert_eq!(stability_gap(&u, &z, &nl, &one, &e, StabilityVariant::AsWritten).unwrap(), 0.0);
    }

    #[test]
    fn weak_residual_constant() {
        let g = line(64);
        let e = ExponentData::new(vec![2.0]).unwrap();
        let c = 0.7;
        let u = GridField::constant(&g, c);
        let one = GridField::constant(&g, 1.0);
        let phi = GridField::from_fn_dirichlet(&g, |x| x[0].sin());
        let (d, gm) = (1.5, 2.5);
        let nl = NonlinearityEval::MixedPower { delta: d, gamma: gm };
        let r = weak_residual(&u, &phi, &nl, &one, &e).unwrap();
        let expect = (c.powf(-d) + c.powf(-gm)) * crate::grid::integrate(&phi);
        assert!((r - expect).abs() < 1e-12 * expect);
    }

    #[test]
    fn singular_support_rejected() {
        let g = line(16);
        let e = ExponentData::new(vec![2.0]).unwrap();
        let u = GridField::zeros(&g);
        let one = GridField::constant(&g, 1.0);
        let phi = GridField::from_fn_dirichlet(&g, |x| x[0].sin());
        let r = weak_residual(&u, &phi, &NonlinearityEval::ExpSingular, &one, &e);
        assert!(matches!(r, Err(Error::Singularity { .. })));
    }

    #[test]
    fn gap_homogeneity_and_sign() {
        let g = line(128);
        let e = ExponentData::new(vec![2.0]).unwrap();
        let u = GridField::constant(&g, 1.0);
        let one = GridField::constant(&g, 1.0);
        let phi = GridField::from_fn_dirichlet(&g, |x| x[0].sin());
        let nl = NonlinearityEval::MixedPower { delta: 1.0, gamma: 1.0 };
        let gap = stability_gap(&u, &phi, &nl, &one, &e, StabilityVariant::AsWritten).unwrap();
        assert!((gap - (1.0 - 2.0) * PI / 2.0).abs() < 1e-3);
        let gap3 = stability_gap(&u, &phi.scaled(3.0), &nl, &one, &e, StabilityVariant::AsWritten).unwrap();
        assert!((gap3 - 9.0 * gap).abs() < 1e-12 * gap.abs() * 9.0);
    }

    #[test]
    fn index_matches_discrete_eigenvalue() {
        let res = 64;
        let g = line(res);
        let h = PI / res as f64;
        let mu = 2.0 / (h * h) * (1.0 - h.cos());
        let e = ExponentData::new(vec![2.0]).unwrap();
        let u = GridField::constant(&g, 1.0);
        let one = GridField::constant(&g, 1.0);
        for lambda in [0.0, 0.5, 1.5] {
            let r = stability_index(
                &u,
                &NonlinearityEval::Linear { slope: lambda },
                &one,
                &e,
                StabilityVariant::AsWritten,
                &EigenOptions::default(),
            )
            .unwrap();
            assert!((r.gap - (mu - lambda)).abs() < 1e-9, "{} vs {}", r.gap, mu - lambda);
            assert_eq!(r.stable, lambda < mu);
        }
    }

    #[test]
    fn zero_potential_is_stable() {
        let g = Grid::unit(2, 12).unwrap();
        let e = ExponentData::new(vec![2.0, 3.0]).unwrap();
        let u = GridField::from_fn(&g, |x| 1.0 + x[0] * x[1]);
        let r = stability_index(
            &u,
            &NonlinearityEval::Linear { slope: 0.0 },
            &GridField::constant(&g, 1.0),
            &e,
            StabilityVariant::WeightedByG,
            &EigenOptions::default(),
        )
        .unwrap();
        assert!(r.gap >= 0.0 && r.stable);
    }

    #[test]
    fn apriori_zero_cutoff() {
        let g = Grid::centered_cube(2, 2.0, 16).unwrap();
        let e = ExponentData::new(vec![2.0, 3.0]).unwrap();
        let u = GridField::constant(&g, 0.5);
        let z = GridField::zeros(&g);
        let one = GridField::constant(&g, 1.0);
        let nl = NonlinearityEval::MixedPower { delta: 2.0, gamma: 3.0 };
        let r = apriori_sides(&u, &z, 3.0, 0.5, Some(2), &nl, &one, &e, 1.0).unwrap();
        assert_eq!((r.lhs, r.rhs), (0.0, 0.0));
        assert!(r.satisfied);
    }

    #[test]
    fn apriori_parameter_checks() {
        let g = Grid::centered_cube(1, 2.0, 16).unwrap();
        let e = ExponentData::new(vec![3.0]).unwrap();
        let u = GridField::constant(&g, 0.5);
        let z = GridField::zeros(&g);
        let one = GridField::constant(&g, 1.0);
        let nl = NonlinearityEval::ExpSingular;
        assert!(apriori_sides(&u, &z, 1.5, 0.5, None, &nl, &one, &e, 1.0).is_err());
        assert!(apriori_sides(&u, &z, 3.0, 1.0, None, &nl, &one, &e, 1.0).is_err());
    }

    #[test]
    fn radii_and_slopes() {
        let r = geometric_radii(1.0, 10.0, 5);
        assert!((r[4] - 10.0).abs() < 1e-12 && (r[2] - 10f64.sqrt()).abs() < 1e-12);
        assert!((lsq_slope(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn ball_weights_area() {
        let g = Grid::centered_cube(2, 1.0, 64).unwrap();
        let w = ball_weights(&g, &[0.0, 0.0], 0.6, 8);
        let area: f64 = w.iter().sum();
        assert!((area - PI * 0.36).abs() < 1e-3, "{area}");
    }

    #[test]
    fn certificate_refused_without_theorem() {
        let spec = ProblemSpec::mixed_power(vec![2.0, 3.0, 4.0], 5.0, 5.0).unwrap();
        let g = Grid::centered_cube(3, 4.0, 8).unwrap();
        let u = GridField::constant(&g, 1.0);
        let r = nonexistence_certificate(&spec, &u, &u, 1.0, &[0.5, 1.0]);
        assert!(matches!(r, Err(Error::NotApplicable(_))));
    }
}
