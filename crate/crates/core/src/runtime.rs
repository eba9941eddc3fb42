//! The per-robot loop: claim a task, plan a skill, run it, check the
//! outcome with the oracle, and fold the result back into the context.
//!
//! Time is driven from outside. [`RobotLoop::tick`] does whatever is due at
//! `cx.now` and reports whether anything changed; [`RobotLoop::wake_at`]
//! says when something will next be due.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use vader_hrfs::{
    AgentKind, Board, ClaimOutcome, HrfsError, Payload, Preference, Profile, Session, Subscription, Task,
    TaskFilter, TaskSpec, TaskStatus, UpdateRequest,
};

use crate::planner::{assess, build_context, Action, ContextEntry, OutcomeEntry, PlanError, Planner, Rung};
use crate::rng::Randomness;
use crate::skills::{attempt, observe_for, FaultConfig, Reported, SkillError, SkillLibrary};
use crate::vqa::{Category, VqaAdapter};
use crate::world::{Tool, WorldError, WorldState};

/// How long a help request may sit unclaimed before the poster moves on.
pub const CLAIM_TIMEOUT: f64 = 120.0;
/// Waits between attempts to post while the board is unreachable.
pub const POST_BACKOFF: [f64; 3] = [5.0, 10.0, 20.0];

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Skill(#[from] SkillError),
    #[error(transparent)]
    Hrfs(#[from] HrfsError),
    #[error(transparent)]
    World(#[from] WorldError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Claimed,
    Planned,
    Executed,
    Assessed,
    HelpPosted,
    HelpResolved,
    TaskReturned,
    TaskDone,
    TaskFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopEvent {
    pub t: f64,
    pub agent: String,
    pub kind: EventKind,
    /// Board task the agent is working on; absent for local follow-ups.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<String>,
    /// Start of the interval this event closes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub since: Option<f64>,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub payload: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqaRecord {
    pub t: f64,
    pub agent: String,
    pub category: Category,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Emit {
    Loop(LoopEvent),
    Vqa(VqaRecord),
}

/// Everything a tick may touch.
pub struct Cx<'a> {
    pub now: f64,
    pub board: &'a Board,
    pub world: &'a mut WorldState,
    pub planner: &'a Planner,
    pub library: &'a SkillLibrary,
    pub faults: &'a FaultConfig,
    pub vqa: &'a mut dyn VqaAdapter,
    pub out: &'a mut Vec<Emit>,
}

#[derive(Debug, Clone)]
struct Job {
    task: Option<String>,
    instruction: String,
    history: Vec<ContextEntry>,
    last_help: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Phase {
    Idle,
    Planning { since: f64, until: f64 },
    Executing { skill: String, since: f64, until: f64 },
    Waiting { help: String, action: Action },
    Backoff { action: Action, attempt: usize, until: f64 },
    Dead,
}

pub struct RobotLoop {
    id: String,
    session: Session,
    sub: Option<Subscription>,
    cursor: u64,
    cache: BTreeMap<String, Task>,
    phase: Phase,
    job: Option<Job>,
    tool: Tool,
    skip: BTreeSet<String>,
    doomed: bool,
    connected: bool,
    outbox: VecDeque<(String, UpdateRequest)>,
    skills_rng: Box<dyn Randomness>,
    vqa_rng: Box<dyn Randomness>,
}

impl RobotLoop {
    /// Join the board and start listening. A `doomed` robot suffers a
    /// hardware failure at the end of its first step.
    pub fn join(
        board: &Board,
        id: &str,
        doomed: bool,
        skills_rng: Box<dyn Randomness>,
        vqa_rng: Box<dyn Randomness>,
    ) -> Result<Self, RuntimeError> {
        let (session, snapshot) = board.join(Profile::new(id, AgentKind::Robot))?;
        let sub = board.subscribe(&session, TaskFilter::all(), Some(snapshot.cursor))?;
        Ok(RobotLoop {
            id: id.to_string(),
            session,
            sub: Some(sub),
            cursor: snapshot.cursor,
            cache: snapshot.tasks.into_iter().map(|t| (t.id.clone(), t)).collect(),
            phase: Phase::Idle,
            job: None,
            tool: Tool::Unknown,
            skip: BTreeSet::new(),
            doomed,
            connected: true,
            outbox: VecDeque::new(),
            skills_rng,
            vqa_rng,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn phase(&self) -> &Phase {
        &self.phase
    }

    pub fn alive(&self) -> bool {
        self.phase != Phase::Dead
    }

    pub fn connected(&self) -> bool {
        self.connected
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn doomed(&self) -> bool {
        self.doomed
    }

    pub fn believed_tool(&self) -> Tool {
        self.tool
    }

    pub fn history(&self) -> &[ContextEntry] {
        self.job.as_ref().map(|j| j.history.as_slice()).unwrap_or(&[])
    }

    pub fn heartbeat(&self, board: &Board) {
        if self.alive() && self.connected {
            if let Err(e) = board.heartbeat(&self.session) {
                log::warn!("{}: heartbeat failed: {e}", self.id);
            }
        }
    }

    /// Next time something becomes due without outside input.
    pub fn wake_at(&self) -> Option<f64> {
        match &self.phase {
            Phase::Planning { until, .. } | Phase::Executing { until, .. } | Phase::Backoff { until, .. } => Some(*until),
            Phase::Waiting { help, .. } => self
                .cache
                .get(help)
                .filter(|t| t.status == TaskStatus::Posted)
                .map(|t| t.updated + CLAIM_TIMEOUT),
            Phase::Idle | Phase::Dead => None,
        }
    }

    /// Drop the connection; the cursor is kept for the reconnect.
    pub fn disconnect(&mut self, board: &Board) {
        if let Some(sub) = self.sub.take() {
            board.unsubscribe(sub.id);
        }
        self.connected = false;
    }

    /// Resume the session (or join afresh if it lapsed), replay missed
    /// events from the cursor and flush queued updates.
    pub fn reconnect(&mut self, cx: &mut Cx) -> Result<(), RuntimeError> {
        if !self.alive() || self.connected {
            return Ok(());
        }
        let fresh = match cx.board.resume(&self.session) {
            Ok(_) => false,
            Err(HrfsError::InvalidSession(_)) => {
                let (s, _) = cx.board.join(Profile::new(&self.id, AgentKind::Robot))?;
                self.session = s;
                true
            }
            Err(e) => return Err(e.into()),
        };
        self.sub = Some(cx.board.subscribe(&self.session, TaskFilter::all(), Some(self.cursor))?);
        self.connected = true;
        self.drain();
        while let Some((id, req)) = self.outbox.pop_front() {
            self.send(cx, &id, req);
        }
        if fresh {
            let lost = self.job.as_ref().and_then(|j| j.task.clone()).filter(|id| {
                self.cache.get(id).and_then(|t| t.claimant.as_deref()) != Some(self.id.as_str())
            });
            if let Some(id) = lost {
                self.emit(cx, EventKind::TaskReturned, Some(id), None, json!({"reason": "claim lost"}));
                self.job = None;
                self.phase = Phase::Idle;
            }
        }
        Ok(())
    }

    fn drain(&mut self) -> bool {
        let Some(sub) = &self.sub else { return false };
        let events = sub.drain();
        let any = !events.is_empty();
        for e in events {
            self.cursor = self.cursor.max(e.seq());
            if let Some(t) = e.task() {
                let newer = self.cache.get(&t.id).is_none_or(|c| c.version < t.version);
                if newer {
                    self.cache.insert(t.id.clone(), t.clone());
                }
            }
        }
        any
    }

    fn emit(&self, cx: &mut Cx, kind: EventKind, task: Option<String>, since: Option<f64>, payload: Value) {
        cx.out.push(Emit::Loop(LoopEvent {
            t: cx.now,
            agent: self.id.clone(),
            kind,
            task,
            since,
            payload,
        }));
    }

    fn job_task(&self) -> Option<String> {
        self.job.as_ref().and_then(|j| j.task.clone())
    }

    /// Do whatever is due. Returns whether anything changed.
    pub fn tick(&mut self, cx: &mut Cx) -> Result<bool, RuntimeError> {
        if !self.alive() {
            return Ok(false);
        }
        let mut progress = self.drain();
        match self.phase.clone() {
            Phase::Idle => {
                if self.connected {
                    if let Some(task) = self.claimable(cx.planner) {
                        self.claim(cx, task)?;
                        progress = true;
                    }
                }
            }
            Phase::Planning { since, until } if until <= cx.now => {
                self.finish_planning(cx, since)?;
                progress = true;
            }
            Phase::Executing { skill, since, until } if until <= cx.now => {
                self.finish_step(cx, &skill, since)?;
                progress = true;
            }
            Phase::Waiting { help, action } => {
                if let Some(t) = self.cache.get(&help).cloned() {
                    let verdict = match t.status {
                        TaskStatus::Done => Some((true, false)),
                        TaskStatus::Failed => Some((false, false)),
                        TaskStatus::Posted if t.updated + CLAIM_TIMEOUT <= cx.now => Some((false, true)),
                        _ => None,
                    };
                    if let Some((completed, timed_out)) = verdict {
                        self.resolve(cx, &help, &action, completed, timed_out);
                        progress = true;
                    }
                }
            }
            Phase::Backoff { action, attempt, until } if until <= cx.now => {
                self.post_help(cx, action, attempt)?;
                progress = true;
            }
            _ => {}
        }
        Ok(progress)
    }

    fn claimable(&self, planner: &Planner) -> Option<Task> {
        self.cache
            .values()
            .filter(|t| {
                t.status == TaskStatus::Posted
                    && matches!(t.executor_preference, Preference::Robot | Preference::Any)
                    && t.payload.target.as_deref().is_none_or(|x| x == self.id)
                    && t.poster != self.id
                    && !self.skip.contains(&t.id)
                    && planner.has_template(&t.instruction)
            })
            .min_by(|a, b| a.id.cmp(&b.id))
            .cloned()
    }

    fn claim(&mut self, cx: &mut Cx, task: Task) -> Result<(), RuntimeError> {
        match cx.board.claim_task(&self.session, &task.id, task.version, false)? {
            ClaimOutcome::Ok(t) => {
                self.cache.insert(t.id.clone(), t.clone());
                self.emit(cx, EventKind::Claimed, Some(t.id.clone()), None, json!({"instruction": t.instruction}));
                self.job = Some(Job {
                    task: Some(t.id.clone()),
                    instruction: t.instruction.clone(),
                    history: Vec::new(),
                    last_help: None,
                });
                self.tool = Tool::Unknown;
                self.maybe_start(cx)?;
                self.begin_planning(cx.now, cx.planner);
            }
            ClaimOutcome::Conflict(t) => {
                self.cache.insert(t.id.clone(), t);
            }
        }
        Ok(())
    }

    /// Move a claimed task to in progress once the agent knows it can do it.
    fn maybe_start(&mut self, cx: &mut Cx) -> Result<(), RuntimeError> {
        let Some(job) = &self.job else { return Ok(()) };
        let Some(id) = job.task.clone() else { return Ok(()) };
        if self.cache.get(&id).map(|t| t.status) != Some(TaskStatus::Claimed) {
            return Ok(());
        }
        let need = cx.planner.template(&job.instruction)?.required_tool;
        if need.is_none_or(|t| t == self.tool) {
            self.send(cx, &id, UpdateRequest::status(TaskStatus::InProgress));
        }
        Ok(())
    }

    fn begin_planning(&mut self, now: f64, planner: &Planner) {
        self.phase = Phase::Planning {
            since: now,
            until: now + planner.latency(),
        };
    }

    /// Status update, queued while disconnected.
    fn send(&mut self, cx: &mut Cx, id: &str, req: UpdateRequest) {
        if !self.connected {
            self.outbox.push_back((id.to_string(), req));
            return;
        }
        match cx.board.update_task(&self.session, id, req) {
            Ok(t) => {
                self.cache.insert(t.id.clone(), t);
            }
            Err(e) => log::warn!("{}: update of {id} failed: {e}", self.id),
        }
    }

    fn finish_planning(&mut self, cx: &mut Cx, since: f64) -> Result<(), RuntimeError> {
        let job = self.job.as_ref().expect("planning without a job");
        let action = cx.planner.plan(&job.instruction, &job.history, self.tool)?;
        let task = self.job_task();
        self.emit(cx, EventKind::Planned, task.clone(), Some(since), json!({"action": action.name()}));
        match action {
            Action::Skill { name } => {
                let d = cx.library.get(&name)?.duration;
                self.phase = Phase::Executing {
                    skill: name,
                    since: cx.now,
                    until: cx.now + d,
                };
            }
            a @ Action::AskHelp { .. } => self.post_help(cx, a, 0)?,
            Action::ReturnTask => {
                if let Some(id) = task.clone() {
                    self.send(cx, &id, UpdateRequest::status(TaskStatus::Returned));
                    self.skip.insert(id);
                }
                self.emit(cx, EventKind::TaskReturned, task, None, json!({"tool": self.tool}));
                self.job = None;
                self.phase = Phase::Idle;
            }
            Action::Done => self.complete(cx)?,
            Action::GiveUp => self.fail(cx, "gave up"),
        }
        Ok(())
    }

    fn finish_step(&mut self, cx: &mut Cx, name: &str, since: f64) -> Result<(), RuntimeError> {
        let skill = cx.library.get(name)?.clone();
        let task = self.job_task();
        let outcome = if skill.info_gathering {
            None
        } else {
            Some(attempt(cx.world, &self.id, &skill, cx.faults, self.skills_rng.as_mut())?)
        };
        let payload = match &outcome {
            Some(o) => json!({"skill": name, "reported": o.reported, "outcome": o.kind, "reason": o.reason}),
            None => json!({"skill": name}),
        };
        self.emit(cx, EventKind::Executed, task.clone(), Some(since), payload);

        if self.doomed {
            cx.world.agent_mut(&self.id)?.hardware_failed = true;
            self.emit(cx, EventKind::TaskFailed, task, None, json!({"reason": "hardware failure"}));
            self.phase = Phase::Dead;
            if let Some(sub) = self.sub.take() {
                cx.board.unsubscribe(sub.id);
            }
            return Ok(());
        }

        let entry = cx.planner.describe_outcome(name)?;
        let answer = if outcome.as_ref().is_some_and(|o| o.reported == Reported::Failure) {
            // the policy already said it failed; no need to look
            failure_answer(&entry)
        } else {
            let obs = observe_for(cx.world, &self.id, &skill)?;
            let a = assess(&entry, &obs, cx.vqa, cx.world, self.vqa_rng.as_mut())?;
            cx.out.push(Emit::Vqa(VqaRecord {
                t: cx.now,
                agent: self.id.clone(),
                category: entry.category,
                correct: a.correct(),
            }));
            a.answer
        };
        if entry.category == Category::SelfInspection {
            self.tool = Tool::parse(&answer);
        }
        let ctx = build_context(name, &entry, &answer);
        self.emit(
            cx,
            EventKind::Assessed,
            task,
            None,
            json!({"skill": name, "answer": answer, "context": ctx.canonical}),
        );
        self.job.as_mut().expect("step without a job").history.push(ctx);
        self.maybe_start(cx)?;
        self.begin_planning(cx.now, cx.planner);
        Ok(())
    }

    fn post_help(&mut self, cx: &mut Cx, action: Action, attempt: usize) -> Result<(), RuntimeError> {
        let Action::AskHelp { help, rung } = &action else {
            unreachable!("post_help with {action:?}")
        };
        if !self.connected {
            match POST_BACKOFF.get(attempt) {
                Some(wait) => {
                    self.phase = Phase::Backoff {
                        until: cx.now + wait,
                        action,
                        attempt: attempt + 1,
                    };
                }
                None => self.fail(cx, "task board unreachable"),
            }
            return Ok(());
        }
        let (preference, target) = match rung {
            Rung::Robot => (Preference::Robot, None),
            Rung::Human => match cx.world.nearest_human(&self.id)? {
                Some(h) => (Preference::Human, Some(h)),
                None => (Preference::Any, None),
            },
        };
        let payload = Payload {
            prompt: Some(help.prompt.clone().unwrap_or_else(|| help.instruction.clone())),
            target: target.clone(),
            effects: (!help.effects.is_empty()).then(|| json!(help.effects)),
            extra: BTreeMap::new(),
        };
        let job = self.job.as_ref().expect("help without a job");
        let reuse = job
            .last_help
            .clone()
            .filter(|id| self.cache.get(id).is_some_and(|t| t.status == TaskStatus::Posted));
        let posted = match reuse {
            Some(id) => cx.board.update_task(
                &self.session,
                &id,
                UpdateRequest {
                    executor_preference: Some(preference),
                    ..UpdateRequest::default()
                }
                .with_payload(payload),
            ),
            None => {
                let mut spec = TaskSpec::new(help.instruction.clone(), preference).with_payload(payload);
                spec.parent = job.task.clone();
                cx.board.post_task(&self.session, spec)
            }
        };
        let t = match posted {
            Ok(t) => t,
            Err(HrfsError::Unreachable) => {
                self.connected = false;
                return self.post_help(cx, action, attempt);
            }
            Err(e) => return Err(e.into()),
        };
        self.cache.insert(t.id.clone(), t.clone());
        self.job.as_mut().expect("help without a job").last_help = Some(t.id.clone());
        self.emit(
            cx,
            EventKind::HelpPosted,
            self.job_task(),
            None,
            json!({
                "help_task": t.id,
                "instruction": help.instruction,
                "rung": rung,
                "preference": preference,
                "target": target,
            }),
        );
        self.phase = Phase::Waiting { help: t.id, action };
        Ok(())
    }

    fn resolve(&mut self, cx: &mut Cx, help: &str, action: &Action, completed: bool, timed_out: bool) {
        let name = action.name();
        let answer = if completed { "yes" } else { "no" };
        let ctx = build_context(&name, &OutcomeEntry::for_help(&name), answer);
        self.job.as_mut().expect("waiting without a job").history.push(ctx);
        self.emit(
            cx,
            EventKind::HelpResolved,
            self.job_task(),
            None,
            json!({"help_task": help, "completed": completed, "timed_out": timed_out}),
        );
        self.begin_planning(cx.now, cx.planner);
    }

    /// Bring a claimed task to in progress so it may finish either way.
    fn ensure_started(&mut self, cx: &mut Cx, id: &str) {
        if self.cache.get(id).map(|t| t.status) == Some(TaskStatus::Claimed) {
            self.send(cx, id, UpdateRequest::status(TaskStatus::InProgress));
        }
    }

    fn complete(&mut self, cx: &mut Cx) -> Result<(), RuntimeError> {
        let job = self.job.take().expect("done without a job");
        if let Some(id) = &job.task {
            self.ensure_started(cx, id);
            self.send(cx, id, UpdateRequest::status(TaskStatus::Done));
        }
        self.emit(cx, EventKind::TaskDone, job.task.clone(), None, json!({"instruction": job.instruction}));
        match cx.planner.template(&job.instruction)?.followup {
            Some(next) => {
                self.job = Some(Job {
                    task: None,
                    instruction: next,
                    history: Vec::new(),
                    last_help: None,
                });
                self.begin_planning(cx.now, cx.planner);
            }
            None => self.phase = Phase::Idle,
        }
        Ok(())
    }

    fn fail(&mut self, cx: &mut Cx, reason: &str) {
        let job = self.job.take();
        let task = job.as_ref().and_then(|j| j.task.clone());
        if let Some(id) = &task {
            self.ensure_started(cx, id);
            self.send(cx, id, UpdateRequest::status(TaskStatus::Failed));
        }
        self.emit(cx, EventKind::TaskFailed, task, None, json!({"reason": reason}));
        self.phase = Phase::Idle;
    }
}

/// The answer recorded when the skill itself reported failure.
fn failure_answer(entry: &OutcomeEntry) -> String {
    entry
        .candidates
        .iter()
        .find(|c| Some(*c) != entry.success_answer.as_ref())
        .cloned()
        .unwrap_or_else(|| crate::planner::UNKNOWN_ANSWER.to_string())
}
