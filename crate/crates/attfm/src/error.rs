//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by panel ingestion, estimation, and simulation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    /// Malformed input or a violated precondition (bad panel, bad config).
    #[error("{0}")]
    Validation(String),

    /// A numerically unusable problem (singular Gram matrix, solver failure).
    #[error("{0}")]
    Numerical(String),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
