use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("index {index} out of range for {len} tokens")]
    Index { index: usize, len: usize },

    #[error("non-finite value at stage `{stage}`")]
    Numeric { stage: &'static str },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: png decode/encode failed: {message}")]
    Png { path: PathBuf, message: String },

    #[error("checkpoint parameter `{param}`: {message}")]
    Checkpoint { param: String, message: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("provider error ({}): {message}", if *.retriable { "retriable" } else { "fatal" })]
    Provider { retriable: bool, message: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
