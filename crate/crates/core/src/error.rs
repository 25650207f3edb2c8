use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite coordinate at position {position}")]
    NonFinite { position: usize },

    #[error("invalid kernel parameter: {0}")]
    InvalidKernel(String),

    #[error("index {index} out of range for domain of size {size}")]
    IndexOutOfRange { index: usize, size: usize },

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("matrix of size {size} is not positive definite after jitter escalation (condition estimate {condition:.3e})")]
    NotPositiveDefinite { size: usize, condition: f64 },

    #[error("noise variance must be strictly positive, got {value} at index {index}")]
    InvalidNoise { index: usize, value: f64 },

    #[error("batch size {batch} exceeds {available} available candidates")]
    BatchTooLarge { batch: usize, available: usize },

    #[error("zero-norm embedding at index {0}")]
    ZeroNorm(usize),

    #[error("no safe seed: pessimistic safe set is empty")]
    NoSafeSeed,

    #[error("markov boundary search did not converge within {picks} picks")]
    NoConvergence { picks: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
