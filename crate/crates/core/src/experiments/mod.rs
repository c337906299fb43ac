//! Experiment lifecycle and the bounded worker pool that runs it.

mod manager;
mod state;

use thiserror::Error;

pub use manager::{
    ExperimentManager, ManagerOptions, QueueEntry, QueueSnapshot, StageTiming, Stats,
};
pub use state::{
    ExperimentConfig, ExperimentState, IllegalTransition, Progress, Status, Transition,
};

use crate::protocol::Role;
use crate::storage::StorageError;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("unknown system {0}")]
    UnknownSystem(String),
    #[error("{slot} slot references {system}, which is registered as {role}")]
    RoleMismatch {
        slot: Role,
        system: String,
        role: Role,
    },
    #[error("unknown task {0}")]
    UnknownTask(String),
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error("capacity must be at least 1")]
    InvalidCapacity,
    #[error("experiment {0} not found")]
    NotFound(String),
    #[error("manager is shutting down")]
    ShuttingDown,
    #[error(transparent)]
    Storage(#[from] StorageError),
}
