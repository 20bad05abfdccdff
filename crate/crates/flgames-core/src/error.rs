//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("label error: {0}")]
    Label(String),

    #[error("data format error: {0}")]
    Format(String),

    #[error("label rule error: {0}")]
    Rule(String),

    #[error("buffer is empty")]
    EmptyBuffer,

    #[error("operation requires the variable-representation variant")]
    FixedRepresentation,

    #[error("missing gradient for client {0}")]
    MissingGradient(usize),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
