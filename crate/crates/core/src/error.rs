use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid parameters or configuration (bad λ, missing column, ...).
    #[error("configuration error: {0}")]
    Config(String),
    /// Malformed or non-finite input data.
    #[error("input error: {0}")]
    Input(String),
    /// Floating-point breakdown that could not be recovered.
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("stream quality: {skipped} of {seen} items were unusable")]
    StreamQuality { skipped: usize, seen: usize },
    /// Unreadable binary artifact: bad magic, truncated payload, shape mismatch.
    #[error("artifact format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
