use thiserror::Error;

/// Crate-wide error type. The CLI maps these onto exit codes: usage
/// errors -> 1, data errors (parse/schema/io) -> 2, numeric faults -> 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed input data, reported with file/line provenance when known.
    #[error("parse error at {context}: {message}")]
    Parse { context: String, message: String },

    /// Structurally valid input that violates a schema contract.
    #[error("schema error: {0}")]
    Schema(String),

    /// Caller misuse: bad arguments, empty required sets, shape mismatches.
    #[error("usage error: {0}")]
    Usage(String),

    /// Non-finite values or other numeric breakdown during training.
    #[error("numeric fault: {0}")]
    Numeric(String),
}

impl Error {
    pub fn parse(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse { context: context.into(), message: message.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
