use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("index out of range on {axis} axis: {index} >= {extent}")]
    Index {
        axis: &'static str,
        index: usize,
        extent: usize,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("expected {expected} frequency indices, found {found}")]
    CountMismatch { expected: usize, found: usize },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error(
        "non-finite loss at epoch {epoch}, batch {batch}: focal={focal}, dice={dice}, total={total}"
    )]
    Diverged {
        epoch: usize,
        batch: usize,
        focal: f64,
        dice: f64,
        total: f64,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
