//! Crate-wide error type.

use std::path::PathBuf;

/// Errors produced by every module in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A configuration value is out of range or inconsistent.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Two shapes that must agree do not.
    #[error("shape mismatch ({context}): expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// A real-valued input is outside the function's domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A batch cannot be evaluated (usually because it is empty).
    #[error("invalid batch: {0}")]
    InvalidBatch(String),

    /// The dataset does not satisfy what the requested operation needs.
    #[error("invalid data: {0}")]
    InvalidData(String),

    /// A JSONL line could not be parsed.
    #[error("{path}:{line}: parse error: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// A JSONL line parsed but failed validation.
    #[error("{path}:{line}: validation error: {message}")]
    Validation {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// Shape statistics are undefined for this sample.
    #[error("degenerate distribution: {0}")]
    Degenerate(String),

    /// Malformed checkpoint bytes.
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 for config/validation failures, 1 for I/O and runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_)
            | Error::InvalidData(_)
            | Error::Parse { .. }
            | Error::Validation { .. } => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
