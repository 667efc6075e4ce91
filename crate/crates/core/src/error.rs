//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A numeric argument fell outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// An invalid configuration value or combination.
    #[error("config error: {0}")]
    Config(String),

    /// A linear-algebra operation failed (singular matrix, failed factorization).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Malformed CSV input.
    #[error("csv error: {0}")]
    Csv(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}
