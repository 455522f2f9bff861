//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration (bad sizes, weights, flags). CLI exit code 2.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed input file. Carries enough context to name the offending
    /// line or index.
    #[error("parse error: {0}")]
    Parse(String),

    /// Structurally valid input that violates a data contract
    /// (unknown token id, missing language, short corpus...). CLI exit code 3.
    #[error("data error: {0}")]
    Data(String),

    /// Post-condition audit failure; lists the offending tokens.
    #[error("audit error: {0}")]
    Audit(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn parse(msg: impl Into<String>) -> Self {
        Error::Parse(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn audit(msg: impl Into<String>) -> Self {
        Error::Audit(msg.into())
    }
}
