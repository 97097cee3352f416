use std::io;

use thiserror::Error;

/// Errors surfaced by the library and the `dmsp` binary.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid value for `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("config line {line}: {reason}")]
    Config { line: usize, reason: String },

    #[error("malformed image: {0}")]
    Image(String),

    #[error("malformed matrix dump: {0}")]
    MatrixDump(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field,
            reason: reason.into(),
        }
    }
}
