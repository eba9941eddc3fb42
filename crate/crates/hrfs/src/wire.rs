//! Newline-delimited JSON protocol spoken over a persistent stream.
//!
//! Every line is an [`Envelope`]. Replies echo the request's `request_id`;
//! pushed events carry none.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::board::{AgentKind, Event, Session, Snapshot, UpdateRequest};
use crate::error::HrfsError;
use crate::task::{Task, TaskFilter, TaskSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum MsgType {
    Join,
    Post,
    Claim,
    Update,
    Subscribe,
    Snapshot,
    Event,
    Error,
    Ping,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    #[serde(rename = "type")]
    pub kind: MsgType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_id: Option<u64>,
    #[serde(default)]
    pub body: Value,
}

impl Envelope {
    pub fn new(kind: MsgType, request_id: Option<u64>, body: impl Serialize) -> Self {
        Envelope {
            kind,
            request_id,
            body: serde_json::to_value(body).unwrap_or(Value::Null),
        }
    }

    pub fn error(request_id: Option<u64>, err: &HrfsError) -> Self {
        let task = match err {
            HrfsError::Rejected { task, .. } => Some((**task).clone()),
            _ => None,
        };
        Envelope::new(
            MsgType::Error,
            request_id,
            ErrorBody {
                code: err.code().to_string(),
                message: err.to_string(),
                task,
            },
        )
    }

    pub fn event(event: &Event) -> Self {
        Envelope::new(MsgType::Event, None, event)
    }

    /// Serialize to one line, newline included.
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("envelope serializes");
        s.push('\n');
        s
    }

    pub fn parse(line: &str) -> Result<Self, HrfsError> {
        serde_json::from_str(line).map_err(|e| HrfsError::Malformed(e.to_string()))
    }

    pub fn body_as<T: for<'de> Deserialize<'de>>(&self) -> Result<T, HrfsError> {
        serde_json::from_value(self.body.clone()).map_err(|e| HrfsError::Malformed(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<Task>,
}

impl ErrorBody {
    pub fn into_error(self) -> HrfsError {
        let detail = self
            .message
            .split_once(": ")
            .map(|(_, rest)| rest.to_string())
            .unwrap_or_else(|| self.message.clone());
        match (self.code.as_str(), self.task) {
            ("already_joined", _) => HrfsError::AlreadyJoined(detail),
            ("invalid_session", _) => {
                HrfsError::InvalidSession(self.message.trim_start_matches("invalid session for ").to_string())
            }
            ("unknown_task", _) => HrfsError::UnknownTask(self.message.trim_start_matches("unknown task ").to_string()),
            ("rejected", Some(task)) => HrfsError::Rejected {
                reason: detail,
                task: Box::new(task),
            },
            ("unreachable", _) => HrfsError::Unreachable,
            _ => HrfsError::Malformed(detail),
        }
    }
}

/// JOIN body. Supplying `token` resumes a live session instead of opening
/// a new one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JoinBody {
    pub agent_id: String,
    pub kind: AgentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JoinReply {
    pub session: Session,
    #[serde(flatten)]
    pub snapshot: Snapshot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostBody {
    #[serde(flatten)]
    pub spec: TaskSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimBody {
    pub task_id: String,
    pub expected_version: u64,
    #[serde(default, rename = "override")]
    pub override_preference: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimReply {
    /// `"ok"` or `"conflict"`.
    pub outcome: String,
    pub task: Task,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateBody {
    pub task_id: String,
    #[serde(flatten)]
    pub update: UpdateRequest,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SubscribeBody {
    #[serde(default)]
    pub filter: TaskFilter,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cursor: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubscribeReply {
    pub subscription: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SnapshotBody {
    #[serde(default)]
    pub filter: TaskFilter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PingReply {
    pub now: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::{Payload, Preference, TaskStatus};

    #[test]
    fn envelope_uses_uppercase_type_names() {
        let env = Envelope::new(MsgType::Ping, Some(7), serde_json::json!({}));
        assert_eq!(env.to_line(), "{\"type\":\"PING\",\"request_id\":7,\"body\":{}}\n");
        let back = Envelope::parse(env.to_line().trim_end()).unwrap();
        assert_eq!(back, env);
    }

    #[test]
    fn task_field_names_are_bit_exact() {
        let task = Task {
            id: "t-000001".into(),
            instruction: "move the chairs".into(),
            executor_preference: Preference::Human,
            status: TaskStatus::InProgress,
            poster: "TW".into(),
            claimant: Some("alice".into()),
            parent: None,
            created: 0.0,
            updated: 1.5,
            payload: Payload {
                prompt: Some("Could you move the chairs?".into()),
                ..Payload::default()
            },
            version: 3,
        };
        let v = serde_json::to_value(&task).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(|k| k.as_str()).collect();
        assert_eq!(
            keys,
            vec![
                "claimant",
                "created",
                "executor_preference",
                "id",
                "instruction",
                "parent",
                "payload",
                "poster",
                "status",
                "updated",
                "version"
            ]
        );
        assert_eq!(v["status"], "in_progress");
        assert_eq!(v["executor_preference"], "human");
    }

    #[test]
    fn errors_round_trip_through_the_wire() {
        let errs = [
            HrfsError::AlreadyJoined("TW".into()),
            HrfsError::InvalidSession("ME".into()),
            HrfsError::UnknownTask("t-000009".into()),
            HrfsError::Malformed("empty instruction".into()),
            HrfsError::Unreachable,
        ];
        for err in errs {
            let env = Envelope::error(Some(1), &err);
            let body: ErrorBody = env.body_as().unwrap();
            assert_eq!(body.into_error(), err);
        }
    }

    #[test]
    fn claim_body_accepts_override_keyword() {
        let b: ClaimBody =
            serde_json::from_str(r#"{"task_id":"t-1","expected_version":2,"override":true}"#).unwrap();
        assert!(b.override_preference);
    }
}
