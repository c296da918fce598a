use std::path::PathBuf;

use dmlbench_core::DmlError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: u64, msg: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite loss {value} at step {step} ({loss})")]
    NonFinite { step: u64, loss: String, value: f64 },
    #[error(transparent)]
    Core(#[from] DmlError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl TrainError {
    pub fn config(msg: impl Into<String>) -> Self {
        TrainError::Config(msg.into())
    }

    /// True for errors caused by the user's configuration rather than by
    /// training itself.
    pub fn is_config(&self) -> bool {
        matches!(self, TrainError::Config(_) | TrainError::Parse { .. } | TrainError::Io { .. })
    }
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;
