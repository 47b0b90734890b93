//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A vendor archive could not be decoded into a [`crate::SubjectRecording`].
    #[error("load error: {0}")]
    Load(String),

    /// A container, checkpoint or series file is malformed.
    #[error("format error: {0}")]
    Format(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    /// An operation was called on data in the wrong state
    /// (e.g. normalizing an already-normalized dataset).
    #[error("invalid state: {0}")]
    State(String),

    #[error("config error: {0}")]
    Config(String),

    /// Checkpoint/model configs disagree; lists the differing fields.
    #[error("incompatible configs, differing fields: {0:?}")]
    Incompatible(Vec<String>),

    /// Training produced a non-finite loss.
    #[error("non-finite loss: {0}")]
    NonFinite(String),
}

impl Error {
    pub fn load(msg: impl Into<String>) -> Self {
        Error::Load(msg.into())
    }
    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
    pub fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }
    pub fn state(msg: impl Into<String>) -> Self {
        Error::State(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
