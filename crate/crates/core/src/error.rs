use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("quantizer eigenbasis does not match the mixture covariance (max deviation {0:e})")]
    EigenbasisMismatch(f64),

    #[error("instance too large: {0}")]
    TooLarge(String),

    #[error("system is not contractive: Lipschitz bound {0} >= 1")]
    NotContractive(f64),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
