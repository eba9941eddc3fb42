//! The task board: sessions, task mutations and the ordered event log.
//!
//! Every task mutation happens under that task's mutex and is appended to the
//! log before the mutex is released, so the log holds each task's versions in
//! order. Subscribers are fed from the log under the log lock; a subscriber
//! that supplies a cursor first receives everything it missed.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use serde::{Deserialize, Serialize};

use crate::clock::Clock;
use crate::error::HrfsError;
use crate::task::{Payload, Preference, Task, TaskFilter, TaskSpec, TaskStatus};

pub const DEFAULT_LIVENESS: f64 = 180.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Robot,
    Human,
    Console,
}

impl AgentKind {
    /// Whether this kind of agent may claim a task with `pref` without
    /// asserting an override.
    pub fn matches_preference(self, pref: Preference) -> bool {
        match pref {
            Preference::Any => true,
            Preference::Robot => self == AgentKind::Robot,
            Preference::Human => self != AgentKind::Robot,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Profile {
    pub agent_id: String,
    pub kind: AgentKind,
}

impl Profile {
    pub fn new(agent_id: impl Into<String>, kind: AgentKind) -> Self {
        Profile {
            agent_id: agent_id.into(),
            kind,
        }
    }
}

/// Handle returned by [`Board::join`]. The token distinguishes a session
/// from a later one for the same agent id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub agent_id: String,
    pub kind: AgentKind,
    pub token: u64,
}

// task events dominate the stream, so boxing would only add allocations
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Task { seq: u64, task: Task },
    Presence {
        seq: u64,
        agent_id: String,
        kind: AgentKind,
        joined: bool,
        at: f64,
    },
}

impl Event {
    pub fn seq(&self) -> u64 {
        match self {
            Event::Task { seq, .. } | Event::Presence { seq, .. } => *seq,
        }
    }

    pub fn task(&self) -> Option<&Task> {
        match self {
            Event::Task { task, .. } => Some(task),
            Event::Presence { .. } => None,
        }
    }

    fn passes(&self, filter: &TaskFilter) -> bool {
        match self {
            Event::Task { task, .. } => filter.matches(task),
            Event::Presence { .. } => filter.task_id.is_none(),
        }
    }
}

/// Current state of every task plus the log position it reflects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub tasks: Vec<Task>,
    pub cursor: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClaimOutcome {
    Ok(Task),
    /// Lost the compare-and-swap; carries the task as it is now.
    Conflict(Task),
}

impl ClaimOutcome {
    pub fn is_ok(&self) -> bool {
        matches!(self, ClaimOutcome::Ok(_))
    }

    pub fn task(&self) -> &Task {
        match self {
            ClaimOutcome::Ok(t) | ClaimOutcome::Conflict(t) => t,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<TaskStatus>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<Payload>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub executor_preference: Option<Preference>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_version: Option<u64>,
}

impl UpdateRequest {
    pub fn status(to: TaskStatus) -> Self {
        UpdateRequest {
            status: Some(to),
            ..UpdateRequest::default()
        }
    }

    pub fn preference(pref: Preference) -> Self {
        UpdateRequest {
            executor_preference: Some(pref),
            ..UpdateRequest::default()
        }
    }

    pub fn with_payload(mut self, payload: Payload) -> Self {
        self.payload = Some(payload);
        self
    }
}

type Sink = Box<dyn FnMut(&Event) -> bool + Send>;

struct Subscriber {
    id: u64,
    filter: TaskFilter,
    sink: Sink,
}

#[derive(Default)]
struct Log {
    events: Vec<Event>,
    latest: BTreeMap<String, Task>,
    subscribers: Vec<Subscriber>,
}

impl Log {
    fn next_seq(&self) -> u64 {
        self.events.len() as u64 + 1
    }

    fn append(&mut self, event: Event) {
        if let Event::Task { task, .. } = &event {
            self.latest.insert(task.id.clone(), task.clone());
        }
        self.subscribers.retain_mut(|s| {
            if event.passes(&s.filter) {
                (s.sink)(&event)
            } else {
                true
            }
        });
        self.events.push(event);
    }

    fn append_task(&mut self, task: &Task) {
        let seq = self.next_seq();
        self.append(Event::Task {
            seq,
            task: task.clone(),
        });
    }
}

struct SessionRecord {
    kind: AgentKind,
    token: u64,
    deadline: f64,
}

/// Receiving end of a subscription backed by a channel.
pub struct Subscription {
    pub id: u64,
    rx: mpsc::Receiver<Event>,
}

impl Subscription {
    pub fn try_recv(&self) -> Option<Event> {
        self.rx.try_recv().ok()
    }

    pub fn drain(&self) -> Vec<Event> {
        self.rx.try_iter().collect()
    }

    pub fn recv_timeout(&self, timeout: std::time::Duration) -> Option<Event> {
        self.rx.recv_timeout(timeout).ok()
    }
}

pub struct Board {
    clock: Arc<dyn Clock>,
    liveness: f64,
    sessions: Mutex<BTreeMap<String, SessionRecord>>,
    tasks: RwLock<BTreeMap<String, Arc<Mutex<Task>>>>,
    log: Mutex<Log>,
    next_task: AtomicU64,
    next_token: AtomicU64,
    next_sub: AtomicU64,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

fn rejected(reason: impl Into<String>, task: &Task) -> HrfsError {
    HrfsError::Rejected {
        reason: reason.into(),
        task: Box::new(task.clone()),
    }
}

impl Board {
    pub fn new(clock: Arc<dyn Clock>) -> Self {
        Board::with_liveness(clock, DEFAULT_LIVENESS)
    }

    pub fn with_liveness(clock: Arc<dyn Clock>, liveness: f64) -> Self {
        Board {
            clock,
            liveness,
            sessions: Mutex::new(BTreeMap::new()),
            tasks: RwLock::new(BTreeMap::new()),
            log: Mutex::new(Log::default()),
            next_task: AtomicU64::new(1),
            next_token: AtomicU64::new(1),
            next_sub: AtomicU64::new(1),
        }
    }

    pub fn now(&self) -> f64 {
        self.clock.now()
    }

    pub fn liveness(&self) -> f64 {
        self.liveness
    }

    /// Open a session. An agent id that already holds a live session is
    /// refused; a stale one is superseded and its claims are returned.
    pub fn join(&self, profile: Profile) -> Result<(Session, Snapshot), HrfsError> {
        if profile.agent_id.trim().is_empty() {
            return Err(HrfsError::Malformed("empty agent id".into()));
        }
        let now = self.now();
        let mut sessions = lock(&self.sessions);
        if let Some(rec) = sessions.get(&profile.agent_id) {
            if rec.deadline > now {
                return Err(HrfsError::AlreadyJoined(profile.agent_id));
            }
            let kind = rec.kind;
            sessions.remove(&profile.agent_id);
            self.release_claims(&profile.agent_id, kind, now);
        }
        let token = self.next_token.fetch_add(1, Ordering::Relaxed);
        sessions.insert(
            profile.agent_id.clone(),
            SessionRecord {
                kind: profile.kind,
                token,
                deadline: now + self.liveness,
            },
        );
        drop(sessions);

        let mut log = lock(&self.log);
        let seq = log.next_seq();
        log.append(Event::Presence {
            seq,
            agent_id: profile.agent_id.clone(),
            kind: profile.kind,
            joined: true,
            at: now,
        });
        let snapshot = Snapshot {
            tasks: log.latest.values().cloned().collect(),
            cursor: log.events.len() as u64,
        };
        Ok((
            Session {
                agent_id: profile.agent_id,
                kind: profile.kind,
                token,
            },
            snapshot,
        ))
    }

    /// Reattach to a live session after a transport drop. The session keeps
    /// its claims; the caller catches up with the snapshot or a cursor.
    pub fn resume(&self, session: &Session) -> Result<Snapshot, HrfsError> {
        self.validate(session)?;
        Ok(self.snapshot(&TaskFilter::all()))
    }

    /// Close a session voluntarily. Held claims are returned to the board.
    pub fn leave(&self, session: &Session) -> Result<(), HrfsError> {
        self.validate(session)?;
        lock(&self.sessions).remove(&session.agent_id);
        self.release_claims(&session.agent_id, session.kind, self.now());
        Ok(())
    }

    /// Extend the session's liveness deadline.
    pub fn heartbeat(&self, session: &Session) -> Result<(), HrfsError> {
        self.validate(session)
    }

    pub fn session_deadline(&self, agent_id: &str) -> Option<f64> {
        lock(&self.sessions).get(agent_id).map(|r| r.deadline)
    }

    pub fn is_joined(&self, agent_id: &str) -> bool {
        lock(&self.sessions).contains_key(agent_id)
    }

    /// Drop every session whose deadline has been reached and return its claims.
    /// Returns the ids of the expired agents.
    pub fn expire_sessions(&self) -> Vec<String> {
        let now = self.now();
        let mut sessions = lock(&self.sessions);
        let expired: Vec<(String, AgentKind)> = sessions
            .iter()
            .filter(|(_, r)| r.deadline <= now)
            .map(|(id, r)| (id.clone(), r.kind))
            .collect();
        for (id, kind) in &expired {
            sessions.remove(id);
            self.release_claims(id, *kind, now);
        }
        expired.into_iter().map(|(id, _)| id).collect()
    }

    fn validate(&self, session: &Session) -> Result<(), HrfsError> {
        let now = self.now();
        let mut sessions = lock(&self.sessions);
        match sessions.get_mut(&session.agent_id) {
            Some(rec) if rec.token == session.token => {
                if rec.deadline <= now {
                    let kind = rec.kind;
                    sessions.remove(&session.agent_id);
                    self.release_claims(&session.agent_id, kind, now);
                    return Err(HrfsError::InvalidSession(session.agent_id.clone()));
                }
                rec.deadline = now + self.liveness;
                Ok(())
            }
            _ => Err(HrfsError::InvalidSession(session.agent_id.clone())),
        }
    }

    /// Return every claimed or in-progress task held by `agent_id`, and
    /// record that the agent left.
    fn release_claims(&self, agent_id: &str, kind: AgentKind, now: f64) {
        let handles: Vec<Arc<Mutex<Task>>> = self.tasks.read().unwrap_or_else(|e| e.into_inner()).values().cloned().collect();
        for handle in handles {
            let mut task = lock(&handle);
            if task.claimant.as_deref() == Some(agent_id)
                && matches!(task.status, TaskStatus::Claimed | TaskStatus::InProgress)
            {
                let mut log = lock(&self.log);
                Self::return_to_board(&mut task, now, &mut log);
            }
        }
        let mut log = lock(&self.log);
        let seq = log.next_seq();
        log.append(Event::Presence {
            seq,
            agent_id: agent_id.to_string(),
            kind,
            joined: false,
            at: now,
        });
    }

    /// claimed|in_progress → returned → posted, one logged version each.
    fn return_to_board(task: &mut Task, now: f64, log: &mut Log) {
        task.status = TaskStatus::Returned;
        task.claimant = None;
        task.version += 1;
        task.updated = now;
        log.append_task(task);
        task.status = TaskStatus::Posted;
        task.version += 1;
        log.append_task(task);
    }

    pub fn post_task(&self, session: &Session, spec: TaskSpec) -> Result<Task, HrfsError> {
        self.validate(session)?;
        if spec.instruction.trim().is_empty() {
            return Err(HrfsError::Malformed("empty instruction".into()));
        }
        if let Some(parent) = &spec.parent {
            if self.task(parent).is_none() {
                return Err(HrfsError::Malformed(format!("unknown parent {parent}")));
            }
        }
        let now = self.now();
        let id = format!("t-{:06}", self.next_task.fetch_add(1, Ordering::Relaxed));
        let task = Task {
            id: id.clone(),
            instruction: spec.instruction,
            executor_preference: spec.executor_preference,
            status: TaskStatus::Posted,
            poster: session.agent_id.clone(),
            claimant: None,
            parent: spec.parent,
            created: now,
            updated: now,
            payload: spec.payload,
            version: 1,
        };
        let handle = Arc::new(Mutex::new(task));
        // Hold the task lock until version 1 is logged so no later version
        // can reach the log first.
        let guard = lock(&handle);
        self.tasks
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(id, handle.clone());
        lock(&self.log).append_task(&guard);
        Ok(guard.clone())
    }

    fn handle(&self, id: &str) -> Result<Arc<Mutex<Task>>, HrfsError> {
        self.tasks
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| HrfsError::UnknownTask(id.to_string()))
    }

    pub fn task(&self, id: &str) -> Option<Task> {
        self.handle(id).ok().map(|h| lock(&h).clone())
    }

    /// Atomic compare-and-swap: succeeds only when the task is posted and at
    /// `expected_version`.
    pub fn claim_task(
        &self,
        session: &Session,
        task_id: &str,
        expected_version: u64,
        override_preference: bool,
    ) -> Result<ClaimOutcome, HrfsError> {
        self.validate(session)?;
        let handle = self.handle(task_id)?;
        let mut task = lock(&handle);
        if task.status != TaskStatus::Posted || task.version != expected_version {
            return Ok(ClaimOutcome::Conflict(task.clone()));
        }
        if !override_preference && !session.kind.matches_preference(task.executor_preference) {
            return Err(rejected("preference mismatch", &task));
        }
        task.status = TaskStatus::Claimed;
        task.claimant = Some(session.agent_id.clone());
        task.version += 1;
        task.updated = self.now();
        lock(&self.log).append_task(&task);
        Ok(ClaimOutcome::Ok(task.clone()))
    }

    pub fn update_task(
        &self,
        session: &Session,
        task_id: &str,
        req: UpdateRequest,
    ) -> Result<Task, HrfsError> {
        self.validate(session)?;
        let handle = self.handle(task_id)?;
        let mut task = lock(&handle);
        if let Some(v) = req.expected_version {
            if v != task.version {
                return Err(rejected("stale version", &task));
            }
        }
        let me = session.agent_id.as_str();
        let is_claimant = task.claimant.as_deref() == Some(me);
        let is_poster = task.poster == me;
        let now = self.now();

        if let Some(to) = req.status {
            if !task.status.can_transition(to) || to == TaskStatus::Posted {
                return Err(rejected(
                    format!("illegal transition {} -> {}", task.status, to),
                    &task,
                ));
            }
            let poster_cancel = to == TaskStatus::Failed && is_poster;
            if !is_claimant && !poster_cancel {
                return Err(rejected("not the claimant", &task));
            }
            if req.executor_preference.is_some() && !is_poster {
                return Err(rejected("only the poster may change preference", &task));
            }
            if let Some(delta) = req.payload {
                task.payload.merge(delta);
            }
            if let Some(pref) = req.executor_preference {
                task.executor_preference = pref;
            }
            let mut log = lock(&self.log);
            if to == TaskStatus::Returned {
                Self::return_to_board(&mut task, now, &mut log);
            } else {
                task.status = to;
                task.version += 1;
                task.updated = now;
                log.append_task(&task);
            }
            return Ok(task.clone());
        }

        if req.payload.is_none() && req.executor_preference.is_none() {
            return Err(HrfsError::Malformed("empty update".into()));
        }
        if task.status.is_terminal() {
            return Err(rejected("task is terminal", &task));
        }
        if req.executor_preference.is_some() && !is_poster {
            return Err(rejected("only the poster may change preference", &task));
        }
        if !is_poster && !is_claimant {
            return Err(rejected("not the poster or claimant", &task));
        }
        if let Some(delta) = req.payload {
            task.payload.merge(delta);
        }
        if let Some(pref) = req.executor_preference {
            task.executor_preference = pref;
        }
        task.version += 1;
        task.updated = now;
        lock(&self.log).append_task(&task);
        Ok(task.clone())
    }

    /// Tasks matching `filter`, as of the returned cursor.
    pub fn snapshot(&self, filter: &TaskFilter) -> Snapshot {
        let log = lock(&self.log);
        Snapshot {
            tasks: log.latest.values().filter(|t| filter.matches(t)).cloned().collect(),
            cursor: log.events.len() as u64,
        }
    }

    /// Events after `cursor` matching `filter`.
    pub fn events_since(&self, cursor: u64, filter: &TaskFilter) -> Vec<Event> {
        let log = lock(&self.log);
        log.events
            .iter()
            .skip(cursor as usize)
            .filter(|e| e.passes(filter))
            .cloned()
            .collect()
    }

    /// The complete log, oldest first.
    pub fn log(&self) -> Vec<Event> {
        lock(&self.log).events.clone()
    }

    /// Register `sink` for events matching `filter`. With a cursor, events
    /// after it are replayed first, atomically with registration. The sink
    /// returns `false` to unsubscribe.
    pub fn subscribe_with(
        &self,
        session: &Session,
        filter: TaskFilter,
        cursor: Option<u64>,
        mut sink: impl FnMut(&Event) -> bool + Send + 'static,
    ) -> Result<u64, HrfsError> {
        self.validate(session)?;
        let id = self.next_sub.fetch_add(1, Ordering::Relaxed);
        let mut log = lock(&self.log);
        if let Some(cursor) = cursor {
            for e in log.events.iter().skip(cursor as usize) {
                if e.passes(&filter) && !sink(e) {
                    return Ok(id);
                }
            }
        }
        log.subscribers.push(Subscriber {
            id,
            filter,
            sink: Box::new(sink),
        });
        Ok(id)
    }

    pub fn subscribe(
        &self,
        session: &Session,
        filter: TaskFilter,
        cursor: Option<u64>,
    ) -> Result<Subscription, HrfsError> {
        let (tx, rx) = mpsc::channel();
        let id = self.subscribe_with(session, filter, cursor, move |e| tx.send(e.clone()).is_ok())?;
        Ok(Subscription { id, rx })
    }

    pub fn unsubscribe(&self, id: u64) {
        lock(&self.log).subscribers.retain(|s| s.id != id);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::VirtualClock;

    fn board() -> (Arc<VirtualClock>, Board) {
        let clock = Arc::new(VirtualClock::new(0.0));
        let b = Board::with_liveness(clock.clone(), 60.0);
        (clock, b)
    }

    fn join(b: &Board, id: &str, kind: AgentKind) -> Session {
        b.join(Profile::new(id, kind)).unwrap().0
    }

    #[test]
    fn duplicate_join_is_refused() {
        let (_, b) = board();
        join(&b, "TW", AgentKind::Robot);
        let err = b.join(Profile::new("TW", AgentKind::Robot)).unwrap_err();
        assert_eq!(err, HrfsError::AlreadyJoined("TW".into()));
        assert_eq!(err.to_string(), "already joined: TW");
    }

    #[test]
    fn join_broadcasts_presence() {
        let (_, b) = board();
        let console = join(&b, "console", AgentKind::Console);
        let sub = b.subscribe(&console, TaskFilter::all(), None).unwrap();
        join(&b, "TW", AgentKind::Robot);
        match sub.try_recv() {
            Some(Event::Presence { agent_id, joined, .. }) => {
                assert_eq!(agent_id, "TW");
                assert!(joined);
            }
            other => panic!("expected presence, got {other:?}"),
        }
    }

    #[test]
    fn post_starts_at_version_one_and_ids_are_unique() {
        let (_, b) = board();
        let me = join(&b, "ME", AgentKind::Robot);
        let spec = TaskSpec::new("open the door", Preference::Human);
        let a = b.post_task(&me, spec.clone()).unwrap();
        let c = b.post_task(&me, spec).unwrap();
        assert_eq!(a.version, 1);
        assert_eq!(a.status, TaskStatus::Posted);
        assert_eq!(a.poster, "ME");
        assert_ne!(a.id, c.id);
    }

    #[test]
    fn malformed_post_changes_nothing() {
        let (_, b) = board();
        let me = join(&b, "ME", AgentKind::Robot);
        let before = b.log().len();
        assert!(matches!(
            b.post_task(&me, TaskSpec::new("  ", Preference::Any)),
            Err(HrfsError::Malformed(_))
        ));
        assert!(matches!(
            b.post_task(&me, TaskSpec::new("x", Preference::Any).with_parent("t-999999")),
            Err(HrfsError::Malformed(_))
        ));
        assert_eq!(b.log().len(), before);
    }

    #[test]
    fn parent_linkage_is_recorded() {
        let (_, b) = board();
        let tw = join(&b, "TW", AgentKind::Robot);
        let root = b.post_task(&tw, TaskSpec::new("wipe the table", Preference::Robot)).unwrap();
        let help = b
            .post_task(&tw, TaskSpec::new("clear the table", Preference::Robot).with_parent(&root.id))
            .unwrap();
        assert_eq!(help.parent.as_deref(), Some(root.id.as_str()));
    }

    #[test]
    fn claim_is_compare_and_swap() {
        let (_, b) = board();
        let tw = join(&b, "TW", AgentKind::Robot);
        let me = join(&b, "ME", AgentKind::Robot);
        let t = b.post_task(&tw, TaskSpec::new("clear the table", Preference::Robot)).unwrap();
        let won = b.claim_task(&me, &t.id, 1, false).unwrap();
        assert!(won.is_ok());
        assert_eq!(won.task().claimant.as_deref(), Some("ME"));
        assert_eq!(won.task().version, 2);
        let lost = b.claim_task(&tw, &t.id, 1, false).unwrap();
        assert!(!lost.is_ok());
        assert_eq!(lost.task().version, 2);
    }

    #[test]
    fn stale_version_after_return_conflicts() {
        let (_, b) = board();
        let tw = join(&b, "TW", AgentKind::Robot);
        let me = join(&b, "ME", AgentKind::Robot);
        let t = b.post_task(&tw, TaskSpec::new("wipe the table", Preference::Robot)).unwrap();
        b.claim_task(&me, &t.id, 1, false).unwrap();
        let back = b.update_task(&me, &t.id, UpdateRequest::status(TaskStatus::Returned)).unwrap();
        assert_eq!(back.status, TaskStatus::Posted);
        assert_eq!(back.claimant, None);
        assert_eq!(back.version, 4);
        assert!(!b.claim_task(&tw, &t.id, 1, false).unwrap().is_ok());
        assert!(b.claim_task(&tw, &t.id, 4, false).unwrap().is_ok());
    }

    #[test]
    fn preference_needs_override_across_kinds() {
        let (_, b) = board();
        let tw = join(&b, "TW", AgentKind::Robot);
        let me = join(&b, "ME", AgentKind::Robot);
        let t = b.post_task(&tw, TaskSpec::new("move the chairs", Preference::Human)).unwrap();
        assert!(matches!(
            b.claim_task(&me, &t.id, 1, false),
            Err(HrfsError::Rejected { .. })
        ));
        assert!(b.claim_task(&me, &t.id, 1, true).unwrap().is_ok());
    }

    #[test]
    fn update_enforces_lifecycle_and_authorization() {
        let (_, b) = board();
        let tw = join(&b, "TW", AgentKind::Robot);
        let me = join(&b, "ME", AgentKind::Robot);
        let t = b.post_task(&tw, TaskSpec::new("clear the table", Preference::Robot)).unwrap();
        b.claim_task(&me, &t.id, 1, false).unwrap();
        // skipping in_progress is illegal
        assert!(b.update_task(&me, &t.id, UpdateRequest::status(TaskStatus::Done)).is_err());
        let t2 = b.update_task(&me, &t.id, UpdateRequest::status(TaskStatus::InProgress)).unwrap();
        assert_eq!(t2.status, TaskStatus::InProgress);
        // non-claimant cannot complete
        let err = b.update_task(&tw, &t.id, UpdateRequest::status(TaskStatus::Done)).unwrap_err();
        match err {
            HrfsError::Rejected { reason, task } => {
                assert_eq!(reason, "not the claimant");
                assert_eq!(task.version, t2.version);
            }
            other => panic!("{other:?}"),
        }
        let done = b.update_task(&me, &t.id, UpdateRequest::status(TaskStatus::Done)).unwrap();
        assert_eq!(done.status, TaskStatus::Done);
        assert_eq!(done.claimant.as_deref(), Some("ME"));
        assert!(b.update_task(&me, &t.id, UpdateRequest::status(TaskStatus::Returned)).is_err());
    }

    #[test]
    fn poster_may_cancel_in_progress_and_repreference_posted() {
        let (_, b) = board();
        let tw = join(&b, "TW", AgentKind::Robot);
        let me = join(&b, "ME", AgentKind::Robot);
        let t = b.post_task(&tw, TaskSpec::new("clear the table", Preference::Robot)).unwrap();
        let t = b.update_task(&tw, &t.id, UpdateRequest::preference(Preference::Human)).unwrap();
        assert_eq!(t.executor_preference, Preference::Human);
        assert_eq!(t.version, 2);
        assert!(b.update_task(&me, &t.id, UpdateRequest::preference(Preference::Any)).is_err());
        b.claim_task(&me, &t.id, 2, true).unwrap();
        b.update_task(&me, &t.id, UpdateRequest::status(TaskStatus::InProgress)).unwrap();
        let f = b.update_task(&tw, &t.id, UpdateRequest::status(TaskStatus::Failed)).unwrap();
        assert_eq!(f.status, TaskStatus::Failed);
    }

    #[test]
    fn versions_strictly_increase_in_the_log() {
        let (_, b) = board();
        let tw = join(&b, "TW", AgentKind::Robot);
        let me = join(&b, "ME", AgentKind::Robot);
        let t = b.post_task(&tw, TaskSpec::new("clear the table", Preference::Robot)).unwrap();
        b.claim_task(&me, &t.id, 1, false).unwrap();
        b.update_task(&me, &t.id, UpdateRequest::status(TaskStatus::Returned)).unwrap();
        b.claim_task(&me, &t.id, 4, false).unwrap();
        b.update_task(&me, &t.id, UpdateRequest::status(TaskStatus::InProgress)).unwrap();
        b.update_task(&me, &t.id, UpdateRequest::status(TaskStatus::Done)).unwrap();
        let versions: Vec<u64> = b.log().iter().filter_map(|e| e.task()).map(|t| t.version).collect();
        assert_eq!(versions, vec![1, 2, 3, 4, 5, 6, 7]);
    }

    #[test]
    fn console_snapshot_equals_replay_of_prior_mutations() {
        let (_, b) = board();
        let tw = join(&b, "TW", AgentKind::Robot);
        let me = join(&b, "ME", AgentKind::Robot);
        let a = b.post_task(&tw, TaskSpec::new("wipe the table", Preference::Robot)).unwrap();
        let c = b.post_task(&tw, TaskSpec::new("move the chairs", Preference::Human)).unwrap();
        b.claim_task(&me, &a.id, 1, false).unwrap();
        b.update_task(&me, &a.id, UpdateRequest::status(TaskStatus::InProgress)).unwrap();
        b.update_task(&tw, &c.id, UpdateRequest::preference(Preference::Any)).unwrap();

        let (_, snap) = b.join(Profile::new("console", AgentKind::Console)).unwrap();
        let mut replayed: BTreeMap<String, Task> = BTreeMap::new();
        for e in b.log().iter().take(snap.cursor as usize) {
            if let Some(t) = e.task() {
                replayed.insert(t.id.clone(), t.clone());
            }
        }
        assert_eq!(snap.tasks, replayed.into_values().collect::<Vec<_>>());
    }

    #[test]
    fn expired_session_claims_are_returned_and_rejoin_allowed() {
        let (clock, b) = board();
        let tw = join(&b, "TW", AgentKind::Robot);
        let me = join(&b, "ME", AgentKind::Robot);
        let t = b.post_task(&tw, TaskSpec::new("clear the table", Preference::Robot)).unwrap();
        b.claim_task(&me, &t.id, 1, false).unwrap();
        clock.advance_to(30.0);
        b.heartbeat(&tw).unwrap();
        clock.advance_to(61.0);
        // TW heartbeated at 30 so only ME is past its deadline.
        assert_eq!(b.expire_sessions(), vec!["ME".to_string()]);
        let t = b.task(&t.id).unwrap();
        assert_eq!(t.status, TaskStatus::Posted);
        assert_eq!(t.claimant, None);
        assert!(matches!(b.heartbeat(&me), Err(HrfsError::InvalidSession(_))));
        let me2 = join(&b, "ME", AgentKind::Robot);
        assert_ne!(me2.token, me.token);
    }

    #[test]
    fn rejoin_after_expiry_supersedes_the_stale_session() {
        let (clock, b) = board();
        let tw = join(&b, "TW", AgentKind::Robot);
        let me = join(&b, "ME", AgentKind::Robot);
        let t = b.post_task(&tw, TaskSpec::new("clear the table", Preference::Robot)).unwrap();
        b.claim_task(&me, &t.id, 1, false).unwrap();
        b.update_task(&me, &t.id, UpdateRequest::status(TaskStatus::InProgress)).unwrap();
        clock.advance_to(100.0);
        // no sweep ran; the rejoin itself reclaims
        let (me2, _) = b.join(Profile::new("ME", AgentKind::Robot)).unwrap();
        assert_eq!(b.task(&t.id).unwrap().status, TaskStatus::Posted);
        assert!(b.heartbeat(&me).is_err());
        assert!(b.heartbeat(&me2).is_ok());
    }

    #[test]
    fn subscription_filters_and_resumes_from_cursor() {
        let (_, b) = board();
        let tw = join(&b, "TW", AgentKind::Robot);
        let console = join(&b, "console", AgentKind::Console);
        let sub = b
            .subscribe(&console, TaskFilter::preferences(&[Preference::Human]), None)
            .unwrap();
        b.post_task(&tw, TaskSpec::new("clear the table", Preference::Robot)).unwrap();
        let chairs = b.post_task(&tw, TaskSpec::new("move the chairs", Preference::Human)).unwrap();
        let got: Vec<Task> = sub.drain().iter().filter_map(|e| e.task().cloned()).collect();
        assert_eq!(got, vec![chairs.clone()]);

        // A late subscriber with cursor 0 sees everything matching.
        let late = b
            .subscribe(&console, TaskFilter::task(&chairs.id), Some(0))
            .unwrap();
        let got: Vec<u64> = late.drain().iter().filter_map(|e| e.task()).map(|t| t.version).collect();
        assert_eq!(got, vec![1]);
    }
}
