use thiserror::Error;

/// Errors raised by the worldline engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("potential evaluated at its singular point")]
    SingularPoint,

    #[error("delta potential has no pointwise value; use the crossing-count line integral")]
    DeltaPointwise,

    #[error("line integral method {method} is not valid for {potential}")]
    MethodMismatch { method: String, potential: String },

    #[error("segment passes through the singularity (logarithmic divergence)")]
    LogSingularity,

    #[error("zero-length segment at a sign change of the trajectory")]
    DegenerateCrossing,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty ensemble")]
    EmptyEnsemble,

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("level index {0} outside the bound-state range")]
    LevelOutOfRange(u32),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("potential is not parity-even: {0}")]
    ParityOdd(String),

    #[error("quadrature did not converge (estimated error {0:e})")]
    QuadratureNonConvergence(f64),

    #[error("allocation of {0} bytes failed")]
    Allocation(usize),

    #[error("degenerate fit window: {0}")]
    DegenerateWindow(String),

    #[error("no compatibility window found")]
    WindowNotFound,

    #[error("projected kernel is non-positive at t = {0}")]
    NonPositiveProjection(f64),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
