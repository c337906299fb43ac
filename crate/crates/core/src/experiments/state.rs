use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::dialogue::{Limits, SystemRef};

/// What to run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub experiment_id: String,
    pub task: String,
    pub agent: SystemRef,
    pub simulator: SystemRef,
    pub num_needs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub limits: Limits,
    #[serde(default)]
    pub submitter: String,
    /// Set by the manager on submission.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub submitted_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Status {
    Queued,
    Provisioning,
    Running,
    Evaluating,
    Done,
    Failed,
}

impl Status {
    pub fn is_terminal(self) -> bool {
        matches!(self, Status::Done | Status::Failed)
    }

    /// Holding a worker slot.
    pub fn is_active(self) -> bool {
        matches!(
            self,
            Status::Provisioning | Status::Running | Status::Evaluating
        )
    }

    pub fn can_transition_to(self, next: Status) -> bool {
        use Status::*;
        matches!(
            (self, next),
            (Queued, Provisioning)
                | (Provisioning, Running)
                | (Running, Evaluating)
                | (Evaluating, Done)
        ) || (!self.is_terminal() && next == Failed)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Status::Queued => "QUEUED",
            Status::Provisioning => "PROVISIONING",
            Status::Running => "RUNNING",
            Status::Evaluating => "EVALUATING",
            Status::Done => "DONE",
            Status::Failed => "FAILED",
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub completed: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub status: Status,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("illegal transition {from} -> {to}")]
pub struct IllegalTransition {
    pub from: Status,
    pub to: Status,
}

/// Where an experiment is in its lifecycle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExperimentState {
    pub experiment_id: String,
    pub status: Status,
    pub progress: Progress,
    pub transitions: Vec<Transition>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_reason: Option<String>,
}

impl ExperimentState {
    pub fn queued(experiment_id: impl Into<String>, total: usize) -> Self {
        Self {
            experiment_id: experiment_id.into(),
            status: Status::Queued,
            progress: Progress {
                completed: 0,
                total,
            },
            transitions: vec![Transition {
                status: Status::Queued,
                at: Utc::now(),
            }],
            failure_reason: None,
        }
    }

    pub fn transition(&mut self, next: Status) -> Result<(), IllegalTransition> {
        if !self.status.can_transition_to(next) {
            return Err(IllegalTransition {
                from: self.status,
                to: next,
            });
        }
        let at = self
            .transitions
            .last()
            .map_or_else(Utc::now, |t| t.at.max(Utc::now()));
        self.status = next;
        self.transitions.push(Transition { status: next, at });
        Ok(())
    }

    pub fn fail(&mut self, reason: impl Into<String>) -> Result<(), IllegalTransition> {
        self.transition(Status::Failed)?;
        self.failure_reason = Some(reason.into());
        Ok(())
    }

    /// When `status` was entered, if it was.
    pub fn entered(&self, status: Status) -> Option<DateTime<Utc>> {
        self.transitions
            .iter()
            .find(|t| t.status == status)
            .map(|t| t.at)
    }
}
