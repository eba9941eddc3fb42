//! Metrics computed from traces alone, so a replayed trace reproduces them.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::harness::OPERATOR;
use super::trace::{split_trials, Record};
use crate::runtime::{EventKind, LoopEvent};

/// Wall-time split of the root task around its first help request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phases {
    pub claim_to_help: f64,
    pub help_wait: f64,
    pub resolve_to_done: f64,
    pub total: f64,
}

/// Where the time between claiming the root task and finishing it went,
/// following the helper while the root agent waits on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalPath {
    pub planning: f64,
    pub executing: f64,
    pub waiting: f64,
    pub total: f64,
    pub planning_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub trial: u64,
    pub completed: bool,
    pub terminated: bool,
    pub failure: Option<String>,
    pub end: f64,
    pub phases: Option<Phases>,
    pub critical_path: Option<CriticalPath>,
    pub help_requests: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub correct: u64,
    pub total: u64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub trials: u64,
    pub completed: u64,
    pub completion_rate: f64,
    pub all_terminated: bool,
    pub failures: BTreeMap<String, u64>,
    pub vqa_accuracy: BTreeMap<String, Accuracy>,
    pub help_requests: BTreeMap<String, u64>,
    pub mean_phases: Option<Phases>,
    pub mean_critical_path: Option<CriticalPath>,
    pub notes: Vec<String>,
    pub per_trial: Vec<TrialMetrics>,
}

fn loops(records: &[Record]) -> impl Iterator<Item = &LoopEvent> {
    records.iter().filter_map(|r| match r {
        Record::Loop(e) => Some(e),
        _ => None,
    })
}

fn first_root(records: &[Record]) -> Option<String> {
    records.iter().find_map(|r| match r {
        Record::Hrfs { task, .. } if task.poster == OPERATOR => Some(task.id.clone()),
        _ => None,
    })
}

fn help_task(e: &LoopEvent) -> Option<&str> {
    e.payload.get("help_task").and_then(|v| v.as_str())
}

/// Sum of `[since, t]` intervals of the given kind, clipped to `[lo, hi]`.
fn busy(events: &[&LoopEvent], kind: EventKind, lo: f64, hi: f64) -> f64 {
    events
        .iter()
        .filter(|e| e.kind == kind)
        .filter_map(|e| e.since.map(|s| (s.max(lo), e.t.min(hi))))
        .map(|(a, b)| (b - a).max(0.0))
        .sum()
}

pub fn trial_metrics(records: &[Record]) -> TrialMetrics {
    let (trial, completed, terminated, failure, end) = records
        .iter()
        .rev()
        .find_map(|r| match r {
            Record::TrialEnd {
                trial,
                t,
                completed,
                terminated,
                failure,
            } => Some((*trial, *completed, *terminated, failure.clone(), *t)),
            _ => None,
        })
        .unwrap_or((0, false, false, None, 0.0));

    let mut help_requests = BTreeMap::new();
    for e in loops(records).filter(|e| e.kind == EventKind::HelpPosted) {
        let pref = e.payload.get("preference").and_then(|v| v.as_str()).unwrap_or("unknown");
        *help_requests.entry(pref.to_string()).or_insert(0) += 1;
    }

    let mut phases = None;
    let mut critical_path = None;
    if let Some(root) = first_root(records) {
        let on_root = |e: &&LoopEvent| e.task.as_deref() == Some(root.as_str());
        let claim = loops(records).filter(on_root).find(|e| e.kind == EventKind::Claimed);
        if let Some(claim) = claim {
            let agent = claim.agent.clone();
            let mine: Vec<&LoopEvent> = loops(records).filter(on_root).filter(|e| e.agent == agent).collect();
            let find = |k: EventKind, after: f64| mine.iter().find(|e| e.kind == k && e.t >= after).copied();
            let done = find(EventKind::TaskDone, claim.t);
            let posted = find(EventKind::HelpPosted, claim.t);
            let resolved = posted.and_then(|p| find(EventKind::HelpResolved, p.t));

            if let (Some(p), Some(r), Some(d)) = (posted, resolved, done) {
                phases = Some(Phases {
                    claim_to_help: p.t - claim.t,
                    help_wait: r.t - p.t,
                    resolve_to_done: d.t - r.t,
                    total: d.t - claim.t,
                });
            }

            if let Some(d) = done {
                let (lo, hi) = (claim.t, d.t);
                let mut planning = busy(&mine, EventKind::Planned, lo, hi);
                let mut executing = busy(&mine, EventKind::Executed, lo, hi);
                let mut open: Option<&LoopEvent> = None;
                for e in &mine {
                    match e.kind {
                        EventKind::HelpPosted => open = Some(e),
                        EventKind::HelpResolved => {
                            if let Some(p) = open.take() {
                                let Some(id) = help_task(p) else { continue };
                                let helper = loops(records)
                                    .find(|h| h.kind == EventKind::Claimed && h.task.as_deref() == Some(id))
                                    .map(|h| h.agent.clone());
                                if let Some(helper) = helper {
                                    let theirs: Vec<&LoopEvent> = loops(records)
                                        .filter(|h| h.agent == helper && h.task.as_deref() == Some(id))
                                        .collect();
                                    planning += busy(&theirs, EventKind::Planned, p.t, e.t);
                                    executing += busy(&theirs, EventKind::Executed, p.t, e.t);
                                }
                            }
                        }
                        _ => {}
                    }
                }
                let total = hi - lo;
                critical_path = Some(CriticalPath {
                    planning,
                    executing,
                    waiting: (total - planning - executing).max(0.0),
                    total,
                    planning_share: if total > 0.0 { planning / total } else { 0.0 },
                });
            }
        }
    }

    TrialMetrics {
        trial,
        completed,
        terminated,
        failure,
        end,
        phases,
        critical_path,
        help_requests,
    }
}

fn mean<T>(items: &[T], f: impl Fn(&T) -> f64) -> f64 {
    items.iter().map(f).sum::<f64>() / items.len() as f64
}

pub fn report(records: &[Record]) -> Report {
    let per_trial: Vec<TrialMetrics> = split_trials(records).into_iter().map(trial_metrics).collect();
    let trials = per_trial.len() as u64;
    let completed = per_trial.iter().filter(|m| m.completed).count() as u64;

    let mut failures = BTreeMap::new();
    for f in per_trial.iter().filter_map(|m| m.failure.as_ref()) {
        *failures.entry(f.clone()).or_insert(0) += 1;
    }
    let mut vqa_accuracy: BTreeMap<String, Accuracy> = BTreeMap::new();
    for r in records {
        if let Record::Vqa(v) = r {
            let a = vqa_accuracy.entry(v.category.to_string()).or_default();
            a.total += 1;
            a.correct += u64::from(v.correct);
        }
    }
    for a in vqa_accuracy.values_mut() {
        a.rate = a.correct as f64 / a.total as f64;
    }
    let mut help_requests = BTreeMap::new();
    for m in &per_trial {
        for (k, v) in &m.help_requests {
            *help_requests.entry(k.clone()).or_insert(0) += v;
        }
    }

    let ph: Vec<&Phases> = per_trial.iter().filter_map(|m| m.phases.as_ref()).collect();
    let mean_phases = (!ph.is_empty()).then(|| Phases {
        claim_to_help: mean(&ph, |p| p.claim_to_help),
        help_wait: mean(&ph, |p| p.help_wait),
        resolve_to_done: mean(&ph, |p| p.resolve_to_done),
        total: mean(&ph, |p| p.total),
    });
    let cp: Vec<&CriticalPath> = per_trial.iter().filter_map(|m| m.critical_path.as_ref()).collect();
    let mean_critical_path = (!cp.is_empty()).then(|| {
        let total = mean(&cp, |c| c.total);
        let planning = mean(&cp, |c| c.planning);
        CriticalPath {
            planning,
            executing: mean(&cp, |c| c.executing),
            waiting: mean(&cp, |c| c.waiting),
            total,
            planning_share: if total > 0.0 { planning / total } else { 0.0 },
        }
    });

    Report {
        trials,
        completed,
        completion_rate: if trials > 0 { completed as f64 / trials as f64 } else { 0.0 },
        all_terminated: per_trial.iter().all(|m| m.terminated),
        failures,
        vqa_accuracy,
        help_requests,
        mean_phases,
        mean_critical_path,
        notes: vec![
            "a failed trial counts as hardware when any robot broke down, else under the category of the first wrong oracle answer".into(),
            "phases are measured on the first operator task, from its claim to its completion".into(),
        ],
        per_trial,
    }
}
