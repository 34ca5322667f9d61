use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid exponents: {0}")]
    InvalidExponents(String),

    /// The Sobolev exponent only exists when the harmonic mean is below the dimension.
    #[error("Sobolev exponent undefined: harmonic mean {pbar} >= dimension {n}")]
    UndefinedExponent { pbar: f64, n: usize },

    #[error("beta = {beta} lies outside the admissible window ({lower}, {upper})")]
    OutOfWindow { beta: f64, lower: f64, upper: f64 },

    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),

    #[error("no nonexistence theorem applies: {0}")]
    NotApplicable(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("{what} did not converge after {iterations} iterations (last residual {residual:e})")]
    NonConvergence {
        what: String,
        iterations: usize,
        residual: f64,
    },

    /// The field vanishes or changes sign where the singular nonlinearity is evaluated.
    #[error("singular evaluation: u = {value} at node {node}")]
    Singularity { node: usize, value: f64 },

    #[error("invalid parameters: {0}")]
    InvalidParameters(String),

    #[error("property {property} violated at t = {t}: lhs = {lhs}, rhs = {rhs}")]
    PropertyViolation {
        property: String,
        t: f64,
        lhs: f64,
        rhs: f64,
    },

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
