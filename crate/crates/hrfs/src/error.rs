use thiserror::Error;

use crate::task::Task;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum HrfsError {
    #[error("already joined: {0}")]
    AlreadyJoined(String),
    #[error("invalid session for {0}")]
    InvalidSession(String),
    #[error("unknown task {0}")]
    UnknownTask(String),
    #[error("malformed request: {0}")]
    Malformed(String),
    /// The request was well-formed but not allowed against the task's current
    /// state. Carries the snapshot the caller should reconcile against.
    #[error("rejected: {reason}")]
    Rejected { reason: String, task: Box<Task> },
    #[error("service unreachable")]
    Unreachable,
}

impl HrfsError {
    pub fn code(&self) -> &'static str {
        match self {
            HrfsError::AlreadyJoined(_) => "already_joined",
            HrfsError::InvalidSession(_) => "invalid_session",
            HrfsError::UnknownTask(_) => "unknown_task",
            HrfsError::Malformed(_) => "malformed",
            HrfsError::Rejected { .. } => "rejected",
            HrfsError::Unreachable => "unreachable",
        }
    }
}
