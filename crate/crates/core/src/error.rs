use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by every fallible operation in this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("input too small: {0}")]
    Size(String),

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("wrong number of inputs: {0}")]
    Arity(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("cached kernels do not match this image or parameter set")]
    InvalidatedCache,
}

impl Error {
    pub(crate) fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// `true` for errors caused by unreadable or malformed files rather than by
    /// inconsistent arguments.
    pub fn is_file_error(&self) -> bool {
        matches!(self, Error::Format { .. } | Error::Io { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
