use thiserror::Error;

/// Errors raised by model validation and the numerical layers built on it.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("initial phase vector must be nonnegative and sum to 1 (sum = {sum})")]
    NonStochasticAlpha { sum: f64 },

    #[error("invalid phase-type subgenerator: {0}")]
    BadSubgenerator(String),

    #[error("model is a subordinator: sigma = 0 requires c_Y > 0 (got c_Y = {c_y})")]
    SubordinatorModel { c_y: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("argument {s} collides with an eigenvalue of the subgenerator")]
    PoleAtEigenvalue { s: num_complex::Complex64 },

    #[error("characteristic roots {0} and {1} are not distinct")]
    RepeatedRoots(num_complex::Complex64, num_complex::Complex64),

    #[error("solver did not converge: {0}")]
    NoConvergence(String),

    #[error("Laplace argument {theta} must exceed the positive root {root}")]
    ThetaNotDominating { theta: f64, root: f64 },

    #[error("geometry violation: {0}")]
    GeometryViolation(String),

    #[error("set B must lie inside [0, {upper}]")]
    BOutOfRange { upper: f64 },

    #[error("Phi(q) = 0: infinite-horizon quantity is degenerate")]
    DegenerateDiscount,

    #[error("index violation: p + q = {0} < 0")]
    IndexViolation(f64),

    #[error("identity requires a bounded-variation model (sigma = 0)")]
    UnboundedVariationModel,

    #[error("quadrature failed: {0}")]
    QuadratureFailure(String),

    #[error("f(b) never became positive; last bracket end {0}")]
    NoBracket(f64),
}

pub type Result<T> = std::result::Result<T, Error>;
