//! Trace records, one JSON object per line.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use vader_hrfs::{Preference, Task, TaskStatus};

use crate::runtime::{LoopEvent, VqaRecord};

/// The parts of a board task version worth keeping in a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub id: String,
    pub instruction: String,
    pub status: TaskStatus,
    pub preference: Preference,
    pub poster: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub claimant: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    pub version: u64,
}

impl From<&Task> for TaskSummary {
    fn from(t: &Task) -> Self {
        TaskSummary {
            id: t.id.clone(),
            instruction: t.instruction.clone(),
            status: t.status,
            preference: t.executor_preference,
            poster: t.poster.clone(),
            claimant: t.claimant.clone(),
            parent: t.parent.clone(),
            target: t.payload.target.clone(),
            version: t.version,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum Record {
    TrialStart {
        trial: u64,
        seed: u64,
    },
    Loop(LoopEvent),
    Hrfs {
        t: f64,
        seq: u64,
        task: TaskSummary,
    },
    Vqa(VqaRecord),
    TrialEnd {
        trial: u64,
        t: f64,
        completed: bool,
        terminated: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        failure: Option<String>,
    },
}

pub fn write_jsonl(out: &mut impl Write, records: &[Record]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut *out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn to_jsonl(records: &[Record]) -> String {
    let mut buf = Vec::new();
    write_jsonl(&mut buf, records).expect("writing to memory");
    String::from_utf8(buf).expect("json is utf-8")
}

pub fn read_jsonl(input: impl BufRead) -> Result<Vec<Record>, serde_json::Error> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line.map_err(serde_json::Error::io)?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

/// Split a multi-trial trace at its trial boundaries.
pub fn split_trials(records: &[Record]) -> Vec<&[Record]> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, r) in records.iter().enumerate() {
        match r {
            Record::TrialStart { .. } => start = Some(i),
            Record::TrialEnd { .. } => {
                if let Some(s) = start.take() {
                    out.push(&records[s..=i]);
                }
            }
            _ => {}
        }
    }
    out
}
