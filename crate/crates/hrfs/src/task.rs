//! Task records and their lifecycle.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Who a poster would like to see claim a task. Advisory: a claimer of the
/// other kind needs the override flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preference {
    Robot,
    Human,
    Any,
}

impl Preference {
    pub fn as_str(self) -> &'static str {
        match self {
            Preference::Robot => "robot",
            Preference::Human => "human",
            Preference::Any => "any",
        }
    }
}

impl fmt::Display for Preference {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Preference {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "robot" => Ok(Preference::Robot),
            "human" => Ok(Preference::Human),
            "any" => Ok(Preference::Any),
            other => Err(format!("unknown preference `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Posted,
    Claimed,
    InProgress,
    /// Part of the wire vocabulary; no transition currently leads here.
    Blocked,
    Done,
    Failed,
    Returned,
}

impl TaskStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskStatus::Posted => "posted",
            TaskStatus::Claimed => "claimed",
            TaskStatus::InProgress => "in_progress",
            TaskStatus::Blocked => "blocked",
            TaskStatus::Done => "done",
            TaskStatus::Failed => "failed",
            TaskStatus::Returned => "returned",
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, TaskStatus::Done | TaskStatus::Failed)
    }

    /// Statuses in which a claimant is recorded on the task.
    pub fn has_claimant(self) -> bool {
        matches!(
            self,
            TaskStatus::Claimed | TaskStatus::InProgress | TaskStatus::Done | TaskStatus::Failed
        )
    }

    /// The lifecycle graph: posted→claimed→in_progress→{done,failed};
    /// claimed|in_progress→returned→posted.
    pub fn can_transition(self, to: TaskStatus) -> bool {
        use TaskStatus::*;
        matches!(
            (self, to),
            (Posted, Claimed)
                | (Claimed, InProgress)
                | (InProgress, Done)
                | (InProgress, Failed)
                | (Claimed, Returned)
                | (InProgress, Returned)
                | (Returned, Posted)
        )
    }
}

impl fmt::Display for TaskStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "posted" => TaskStatus::Posted,
            "claimed" => TaskStatus::Claimed,
            "in_progress" => TaskStatus::InProgress,
            "blocked" => TaskStatus::Blocked,
            "done" => TaskStatus::Done,
            "failed" => TaskStatus::Failed,
            "returned" => TaskStatus::Returned,
            other => return Err(format!("unknown status `{other}`")),
        })
    }
}

/// Structured task payload. The named fields are the ones the fleet uses;
/// anything else a client attaches rides along in `extra`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Payload {
    /// Natural-language prompt for whoever picks the task up.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    /// Agent the poster would like to handle the task.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    /// World effects a human completing the task is expected to bring about.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub effects: Option<Value>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

impl Payload {
    pub fn is_empty(&self) -> bool {
        self.prompt.is_none() && self.target.is_none() && self.effects.is_none() && self.extra.is_empty()
    }

    /// Field-wise merge: set fields in `delta` overwrite ours.
    pub fn merge(&mut self, delta: Payload) {
        if delta.prompt.is_some() {
            self.prompt = delta.prompt;
        }
        if delta.target.is_some() {
            self.target = delta.target;
        }
        if delta.effects.is_some() {
            self.effects = delta.effects;
        }
        self.extra.extend(delta.extra);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub instruction: String,
    pub executor_preference: Preference,
    pub status: TaskStatus,
    pub poster: String,
    pub claimant: Option<String>,
    pub parent: Option<String>,
    pub created: f64,
    pub updated: f64,
    #[serde(default, skip_serializing_if = "Payload::is_empty")]
    pub payload: Payload,
    pub version: u64,
}

/// What a poster supplies; the board fills in the rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub instruction: String,
    #[serde(default = "default_preference")]
    pub executor_preference: Preference,
    #[serde(default)]
    pub parent: Option<String>,
    #[serde(default)]
    pub payload: Payload,
}

fn default_preference() -> Preference {
    Preference::Any
}

impl TaskSpec {
    pub fn new(instruction: impl Into<String>, preference: Preference) -> Self {
        TaskSpec {
            instruction: instruction.into(),
            executor_preference: preference,
            parent: None,
            payload: Payload::default(),
        }
    }

    pub fn with_parent(mut self, parent: impl Into<String>) -> Self {
        self.parent = Some(parent.into());
        self
    }

    pub fn with_payload(mut self, payload: Payload) -> Self {
        self.payload = payload;
        self
    }
}

/// Subscription filter. Unset fields match everything.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskFilter {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preference: Option<Vec<Preference>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<Vec<TaskStatus>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poster: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_id: Option<String>,
}

impl TaskFilter {
    pub fn all() -> Self {
        TaskFilter::default()
    }

    pub fn task(id: impl Into<String>) -> Self {
        TaskFilter {
            task_id: Some(id.into()),
            ..TaskFilter::default()
        }
    }

    pub fn preferences(prefs: &[Preference]) -> Self {
        TaskFilter {
            preference: Some(prefs.to_vec()),
            ..TaskFilter::default()
        }
    }

    pub fn matches(&self, task: &Task) -> bool {
        if let Some(prefs) = &self.preference {
            if !prefs.contains(&task.executor_preference) {
                return false;
            }
        }
        if let Some(statuses) = &self.status {
            if !statuses.contains(&task.status) {
                return false;
            }
        }
        if let Some(poster) = &self.poster {
            if poster != &task.poster {
                return false;
            }
        }
        if let Some(id) = &self.task_id {
            if id != &task.id {
                return false;
            }
        }
        true
    }
}
