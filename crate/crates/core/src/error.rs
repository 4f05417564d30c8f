use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CpnnError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CpnnError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: row {row}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        row: usize,
        column: usize,
        message: String,
    },

    /// Malformed or inconsistent input data (ids, shapes, missing rows).
    #[error("{0}")]
    Data(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Non-finite loss, failed optimization, failed gradient check.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Coarse failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numeric,
}

impl CpnnError {
    pub fn class(&self) -> ErrorClass {
        match self {
            CpnnError::Numeric(_) => ErrorClass::Numeric,
            CpnnError::Config(_) => ErrorClass::Usage,
            _ => ErrorClass::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CpnnError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        CpnnError::Data(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        CpnnError::Shape(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        CpnnError::Numeric(msg.into())
    }
}
