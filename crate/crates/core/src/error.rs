use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("action index {0} outside 0..=32")]
    InvalidAction(i64),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("simulator fault: {0}")]
    SimulatorFault(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("training fault: {0}")]
    TrainingFault(String),

    #[error("replay buffer not ready: {size} stored, {needed} needed")]
    NotReady { size: usize, needed: usize },

    #[error("rejected transition: {0}")]
    RejectedTransition(String),

    #[error("internal fault: {0}")]
    InternalFault(String),

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("replay diverged at step {step}: {reason}")]
    ReplayDivergence { step: u64, reason: String },

    #[error("dataset quality: {0}")]
    DatasetQuality(String),

    #[error("storage error at {}: {message}", path.display())]
    Storage { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn storage(path: impl Into<PathBuf>, err: impl std::fmt::Display) -> Self {
        Error::Storage {
            path: path.into(),
            message: err.to_string(),
        }
    }
}
