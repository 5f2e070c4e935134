use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the core library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },
    #[error("class {class_id} has {count} members; at least {required} are needed")]
    ClassTooSmall { class_id: usize, count: usize, required: usize },
    #[error("class {class_id} has no members in the labeled subset")]
    EmptyClass { class_id: usize },
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn shape_err(expected: impl std::fmt::Debug, got: impl std::fmt::Debug) -> Error {
    Error::Shape { expected: format!("{expected:?}"), got: format!("{got:?}") }
}

pub(crate) fn file_err(path: impl Into<PathBuf>, message: impl ToString) -> Error {
    Error::File { path: path.into(), message: message.to_string() }
}

pub(crate) fn shape_text(expected: impl Into<String>, got: impl Into<String>) -> Error {
    Error::Shape { expected: expected.into(), got: got.into() }
}
