//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("covariance is not positive semi-definite (jitter escalation exhausted)")]
    NonPsdCovariance,
    #[error("variance must be strictly positive")]
    NonPositiveVariance,
    #[error("negative variance encountered")]
    NegativeVariance,
    #[error("weight layout index out of bounds: {0}")]
    LayoutOutOfBounds(String),
    #[error("objective evaluated to a non-finite value")]
    NonFiniteObjective,
    #[error("model file is malformed: {0}")]
    ModelFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dims(context: &str, expected: usize, got: usize) -> Self {
        Error::DimensionMismatch(format!("{context}: expected {expected}, got {got}"))
    }
}
