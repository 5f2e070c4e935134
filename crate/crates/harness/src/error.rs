use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    /// Bad or inconsistent configuration; nothing was run.
    #[error("config error: {0}")]
    Config(String),
    /// An upstream artifact (run, checkpoint, ledger) does not exist yet.
    #[error("missing dependency: {0}")]
    Missing(String),
    #[error(transparent)]
    Core(#[from] sslab_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Runtime(String),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

impl HarnessError {
    /// Process exit status: 2 config, 3 missing dependency, 4 anything else.
    #[must_use]
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Missing(_) => 3,
            _ => 4,
        }
    }
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> HarnessError {
    let path = path.into();
    move |source| HarnessError::Io { path, source }
}

pub(crate) fn config(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

pub(crate) fn missing(msg: impl Into<String>) -> HarnessError {
    HarnessError::Missing(msg.into())
}

pub(crate) fn runtime(msg: impl Into<String>) -> HarnessError {
    HarnessError::Runtime(msg.into())
}
