use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("validation error: {what} (deviation {deviation:.3e})")]
    Validation { what: String, deviation: f64 },

    #[error("numerical corruption: {0}")]
    Numerical(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("format error in {field}: {detail}")]
    Format { field: String, detail: String },

    #[error("empty result: {0}")]
    EmptyResult(String),

    #[error("insufficient samples: need {needed}, have {available}")]
    InsufficientSamples { needed: usize, available: usize },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn format(field: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Format {
            field: field.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status used by the CLI: 1 usage, 2 data, 3 numerical invariant.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Shape(_) | Error::Config(_) | Error::Unsupported(_) => 1,
            Error::Format { .. } | Error::EmptyResult(_) | Error::InsufficientSamples { .. } | Error::Io { .. } => 2,
            Error::Validation { .. } | Error::Numerical(_) => 3,
        }
    }
}
