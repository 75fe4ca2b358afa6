use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A tensor extent does not match what the operation requires.
    #[error("dimension error in {op}: axis {axis}: {detail}")]
    Dimension {
        op: &'static str,
        axis: &'static str,
        detail: String,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("tape error: {0}")]
    Tape(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dim(op: &'static str, axis: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            axis,
            detail: detail.into(),
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
