use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("gaussian process memory is empty")]
    EmptyMemory,

    #[error("observation target must be finite, got {0}")]
    NonFiniteTarget(f64),

    #[error("kernel matrix ({n}x{n}) not positive definite after jitter escalation to {jitter:e}")]
    Factorization { n: usize, jitter: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("environment fault: {0}")]
    Env(String),

    #[error("unknown environment `{0}`")]
    UnknownEnv(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}
