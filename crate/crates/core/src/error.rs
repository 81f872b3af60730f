use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input violates a documented precondition (dimension mismatch, bad
    /// parameter, duplicate id, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// Input is well-formed but the operation has no defined result on it
    /// (zero vector, zero variance, cancelling mean).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Binary or text file does not follow its declared layout.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid JSON in {context}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn degenerate(msg: impl Into<String>) -> Self {
        Error::Degenerate(msg.into())
    }

    pub fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: msg.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    /// True for errors caused by the content of the input rather than by
    /// I/O or file layout.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Validation(_) | Error::Degenerate(_))
    }
}
