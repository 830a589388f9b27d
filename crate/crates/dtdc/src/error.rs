use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("generation failed: {0}")]
    Generation(String),

    #[error("iteration did not converge: {0}")]
    NonConvergence(String),

    #[error("mixing fit failed: {0}")]
    MixingFit(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("model assumption violated: {0}")]
    AssumptionViolation(String),

    #[error("behavior policy support violation: {0}")]
    SupportViolation(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("sample stream exhausted: needed {needed}, available {available}")]
    SampleExhausted { needed: usize, available: usize },

    #[error("experiment spec error: {0}")]
    Spec(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
