use thiserror::Error;

use irl_core::IrlError;

#[derive(Debug, Error)]
pub enum BenchError {
    /// Malformed or inconsistent configuration (CLI exit code 2).
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Irl(#[from] IrlError),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, BenchError>;
