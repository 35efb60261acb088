use thiserror::Error;

/// Errors raised by the allocation-policy toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("constraint system is infeasible")]
    InfeasibleSystem,

    #[error("random constraint generation failed after {retries} retries")]
    GenerationFailed { retries: usize },

    #[error("degenerate hull: {0}")]
    DegenerateHull(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("value {x} outside support [{lo}, {hi}]")]
    OutOfSupport { x: f64, lo: f64, hi: f64 },

    #[error("beta fit failed: {0}")]
    FitFailed(String),

    #[error("beta fit failed for dimension {dim}: {reason}")]
    DimensionFitFailed { dim: usize, reason: String },

    #[error("rejection sampler accepted nothing in {tries} proposals")]
    AcceptanceTooLow { tries: usize },

    #[error("action violates the constraint system by {violation:e}")]
    InfeasibleAction { violation: f64 },

    #[error("non-finite loss during update: {0}")]
    NonFiniteLoss(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
