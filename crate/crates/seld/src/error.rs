//! Error type shared across the toolkit.

use std::path::PathBuf;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A label row, config key or argument failed structural parsing.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// A value is outside its documented range.
    #[error("{0}")]
    Validation(String),

    /// Tensor/branch dimensions do not line up.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Underlying I/O failure, annotated with the path involved.
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// WAV container violates the expected format.
    #[error("audio format error: {0}")]
    AudioFormat(String),

    /// Training diverged.
    #[error("loss became non-finite at step {step}")]
    NonFiniteLoss { step: usize },
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors a CLI should map to the I/O exit code.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
