use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("radius {r} outside the admissible range (0, {r0}]")]
    OutOfRange { r: f64, r0: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("kernel integral diverges at the origin")]
    Divergent,
    #[error("scan exhausted: {0}")]
    ScanExhausted(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("cover verification failed: {0}")]
    CoverFailed(String),
    #[error("quadrature tolerance not reached: {0}")]
    Tolerance(String),
    #[error("equilibrium solver residual {residual:.3e} above {threshold:.3e}")]
    SolverFailed { residual: f64, threshold: f64 },
    #[error("parameter search exhausted at step {step}: condition ({condition}) {detail}")]
    SearchExhausted {
        step: usize,
        condition: String,
        detail: String,
    },
    #[error("certificate violated: {0}")]
    Violation(String),
    #[error("insufficient depth: {0}")]
    InsufficientDepth(String),
    #[error("walk failure: {0}")]
    Walk(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
