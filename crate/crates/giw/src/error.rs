//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the library and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    /// Matrix or vector dimensions do not compose.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Input violates a documented precondition.
    #[error("domain error: {0}")]
    Domain(String),

    /// Input is formally valid but numerically degenerate (e.g. all rows identical).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// A numerical routine failed to produce a usable result.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Experiment config could not be parsed.
    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn degenerate(msg: impl Into<String>) -> Self {
        Error::Degenerate(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}
