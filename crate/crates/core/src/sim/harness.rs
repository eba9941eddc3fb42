//! Discrete-event episode scheduler.
//!
//! At each instant every participant is ticked in id order until a full
//! pass changes nothing; then time jumps to the earliest pending wakeup.
//! An episode ends when nothing is pending (it terminated) or when the
//! next wakeup lies past the horizon.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use thiserror::Error;
use vader_hrfs::{
    AgentKind, Board, Clock, Event, Payload, Profile, Session, TaskFilter, TaskSpec, TaskStatus, VirtualClock,
};

use super::human::SimHuman;
use super::trace::{Record, TaskSummary};
use super::{RootTask, Scenario, ScenarioError};
use crate::planner::Planner;
use crate::rng::{Entropy, Seeded};
use crate::runtime::{Cx, Emit, EventKind, RobotLoop, RuntimeError};
use crate::skills::SkillLibrary;
use crate::vqa::SimulatedVqa;
use crate::world::{Effect, WorldState};

pub const OPERATOR: &str = "operator";
const MAX_PASSES: usize = 100_000;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error("board error: {0}")]
    Hrfs(#[from] vader_hrfs::HrfsError),
    #[error("no fixed point at t={0}")]
    Livelock(f64),
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrialOutcome {
    pub trial: u64,
    pub completed: bool,
    pub terminated: bool,
    pub failure: Option<String>,
    pub end: f64,
}

enum Participant {
    Robot(Box<RobotLoop>),
    Human(Box<SimHuman>),
}

pub struct Episode {
    clock: Arc<dyn Clock>,
    virtual_clock: Option<Arc<VirtualClock>>,
    board: Arc<Board>,
    world: WorldState,
    planner: Planner,
    library: SkillLibrary,
    faults: crate::skills::FaultConfig,
    vqa: SimulatedVqa,
    participants: BTreeMap<String, Participant>,
    operator: Session,
    roots: Vec<String>,
    pending: Vec<RootTask>,
    /// (time, agent, comes back up)
    outages: Vec<(f64, String, bool)>,
    trace: Vec<Record>,
    log_cursor: u64,
    proxy_humans: bool,
    applied: BTreeSet<String>,
    trial: u64,
    horizon: f64,
    liveness: f64,
}

impl Episode {
    /// A simulated episode on virtual time.
    pub fn simulated(scenario: &Scenario, entropy: &mut dyn Entropy, trial: u64, seed: u64) -> Result<Self, SimError> {
        let clock = Arc::new(VirtualClock::new(0.0));
        let board = Arc::new(Board::with_liveness(clock.clone(), scenario.liveness));
        Self::build(scenario, entropy, trial, seed, clock.clone(), Some(clock), board, true)
    }

    /// An episode on a caller-supplied clock and board. Without simulated
    /// humans, effects of tasks finished by people are applied when they
    /// are marked done.
    pub fn with_board(
        scenario: &Scenario,
        entropy: &mut dyn Entropy,
        trial: u64,
        seed: u64,
        clock: Arc<dyn Clock>,
        board: Arc<Board>,
        simulate_humans: bool,
    ) -> Result<Self, SimError> {
        Self::build(scenario, entropy, trial, seed, clock, None, board, simulate_humans)
    }

    #[allow(clippy::too_many_arguments)]
    fn build(
        scenario: &Scenario,
        entropy: &mut dyn Entropy,
        trial: u64,
        seed: u64,
        clock: Arc<dyn Clock>,
        virtual_clock: Option<Arc<VirtualClock>>,
        board: Arc<Board>,
        simulate_humans: bool,
    ) -> Result<Self, SimError> {
        let planner = scenario.build_planner()?;
        let mut world = scenario.world.clone();
        world.advance_clock_to(clock.now());

        let mut hardware = entropy.stream("hardware");
        let mut participants = BTreeMap::new();
        for id in scenario.robots() {
            let doomed = hardware.chance(scenario.faults.p_hardware_for(&id));
            let r = RobotLoop::join(
                &board,
                &id,
                doomed,
                entropy.stream(&format!("{id}/skills")),
                entropy.stream(&format!("{id}/vqa")),
            )?;
            participants.insert(id, Participant::Robot(Box::new(r)));
        }
        if simulate_humans {
            for id in scenario.world.humans.keys() {
                let h = SimHuman::join(&board, id, scenario.human_config(id), entropy.stream(&format!("{id}/human")))?;
                participants.insert(id.clone(), Participant::Human(Box::new(h)));
            }
        }
        let (operator, _) = board.join(Profile::new(OPERATOR, AgentKind::Console))?;

        let mut pending = scenario.tasks.clone();
        pending.sort_by(|a, b| a.at.total_cmp(&b.at));
        let mut outages: Vec<(f64, String, bool)> = scenario
            .outages
            .iter()
            .flat_map(|o| [(o.at, o.agent.clone(), false), (o.at + o.duration, o.agent.clone(), true)])
            .collect();
        outages.sort_by(|a, b| a.0.total_cmp(&b.0));

        let log_cursor = board.log().len() as u64;
        Ok(Episode {
            clock,
            virtual_clock,
            board,
            world,
            planner,
            library: scenario.library(),
            faults: scenario.faults.clone(),
            vqa: SimulatedVqa::new(scenario.noise.clone()),
            participants,
            operator,
            roots: Vec::new(),
            pending,
            outages,
            trace: vec![Record::TrialStart { trial, seed }],
            log_cursor,
            proxy_humans: !simulate_humans,
            applied: BTreeSet::new(),
            trial,
            horizon: scenario.horizon,
            liveness: scenario.liveness,
        })
    }

    pub fn board(&self) -> &Arc<Board> {
        &self.board
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn trace(&self) -> &[Record] {
        &self.trace
    }

    pub fn roots(&self) -> &[String] {
        &self.roots
    }

    pub fn now(&self) -> f64 {
        self.clock.now()
    }

    /// Record board log entries since the last look.
    fn record_board(&mut self) {
        for e in self.board.events_since(self.log_cursor, &TaskFilter::all()) {
            self.log_cursor = self.log_cursor.max(e.seq());
            if let Event::Task { seq, task } = &e {
                self.trace.push(Record::Hrfs {
                    t: task.updated,
                    seq: *seq,
                    task: TaskSummary::from(task),
                });
            }
        }
    }

    fn take_emits(&mut self, out: Vec<Emit>) {
        self.trace.extend(out.into_iter().map(|e| match e {
            Emit::Loop(l) => Record::Loop(l),
            Emit::Vqa(v) => Record::Vqa(v),
        }));
    }

    /// Bring the episode up to `now` and settle everything due.
    pub fn step(&mut self, now: f64) -> Result<(), SimError> {
        if let Some(v) = &self.virtual_clock {
            v.advance_to(now);
        }
        self.world.advance_clock_to(now);

        while self.outages.first().is_some_and(|o| o.0 <= now) {
            let (_, agent, up) = self.outages.remove(0);
            let mut out = Vec::new();
            if let Some(Participant::Robot(r)) = self.participants.get_mut(&agent) {
                if up {
                    let mut cx = Cx {
                        now,
                        board: &self.board,
                        world: &mut self.world,
                        planner: &self.planner,
                        library: &self.library,
                        faults: &self.faults,
                        vqa: &mut self.vqa,
                        out: &mut out,
                    };
                    r.reconnect(&mut cx)?;
                } else {
                    r.disconnect(&self.board);
                }
            }
            self.take_emits(out);
        }

        while self.pending.first().is_some_and(|t| t.at <= now) {
            let t = self.pending.remove(0);
            let payload = Payload {
                target: t.target.clone(),
                ..Payload::default()
            };
            let task = self
                .board
                .post_task(&self.operator, TaskSpec::new(t.instruction, t.preference).with_payload(payload))?;
            self.roots.push(task.id);
        }

        let _ = self.board.heartbeat(&self.operator);
        for p in self.participants.values() {
            match p {
                Participant::Robot(r) => r.heartbeat(&self.board),
                Participant::Human(h) => h.heartbeat(&self.board),
            }
        }
        self.board.expire_sessions();
        self.record_board();
        self.settle(now)?;
        if self.proxy_humans {
            self.apply_human_effects();
        }
        Ok(())
    }

    fn settle(&mut self, now: f64) -> Result<(), SimError> {
        let ids: Vec<String> = self.participants.keys().cloned().collect();
        for _ in 0..MAX_PASSES {
            let mut any = false;
            for id in &ids {
                let mut out = Vec::new();
                let progressed = match self.participants.get_mut(id).expect("participant") {
                    Participant::Robot(r) => {
                        let mut cx = Cx {
                            now,
                            board: &self.board,
                            world: &mut self.world,
                            planner: &self.planner,
                            library: &self.library,
                            faults: &self.faults,
                            vqa: &mut self.vqa,
                            out: &mut out,
                        };
                        r.tick(&mut cx)?
                    }
                    Participant::Human(h) => h.tick(now, &self.board, &mut self.world)?,
                };
                self.take_emits(out);
                self.record_board();
                any |= progressed;
            }
            if !any {
                return Ok(());
            }
        }
        Err(SimError::Livelock(now))
    }

    /// Effects of tasks people marked done, for runs without simulated
    /// humans.
    fn apply_human_effects(&mut self) {
        let robots: BTreeSet<&String> = self
            .participants
            .iter()
            .filter(|(_, p)| matches!(p, Participant::Robot(_)))
            .map(|(id, _)| id)
            .collect();
        for t in self.board.snapshot(&TaskFilter::all()).tasks {
            if t.status != TaskStatus::Done || self.applied.contains(&t.id) {
                continue;
            }
            let by_person = t.claimant.as_ref().is_some_and(|c| !robots.contains(c));
            let effects = t.payload.effects.clone();
            self.applied.insert(t.id.clone());
            if let (true, Some(v)) = (by_person, effects) {
                match serde_json::from_value::<Vec<Effect>>(v) {
                    Ok(es) => {
                        for e in es {
                            if let Err(err) = self.world.apply(&e) {
                                log::warn!("effect of {} not applied: {err}", t.id);
                            }
                        }
                    }
                    Err(err) => log::warn!("unreadable effects on {}: {err}", t.id),
                }
            }
        }
    }

    /// Earliest time after `now` at which something is due.
    pub fn next_wake(&self, now: f64) -> Option<f64> {
        let mut times: Vec<f64> = Vec::new();
        for (id, p) in &self.participants {
            match p {
                Participant::Robot(r) => {
                    times.extend(r.wake_at());
                    if !r.alive() || !r.connected() {
                        times.extend(self.board.session_deadline(id));
                    }
                }
                Participant::Human(h) => times.extend(h.wake_at()),
            }
        }
        times.extend(self.pending.iter().map(|t| t.at));
        times.extend(self.outages.iter().map(|o| o.0));
        let next = times.into_iter().filter(|t| *t > now).min_by(f64::total_cmp)?;
        // keep heartbeats flowing across long quiet stretches
        Some(next.min(now + self.liveness / 2.0))
    }

    pub fn completed(&self) -> bool {
        self.pending.is_empty()
            && !self.roots.is_empty()
            && self
                .roots
                .iter()
                .all(|id| self.board.task(id).is_some_and(|t| t.status == TaskStatus::Done))
    }

    /// Run on virtual time until quiescence or the horizon.
    pub fn run(mut self) -> Result<(Vec<Record>, TrialOutcome), SimError> {
        let mut now = self.clock.now();
        let terminated = loop {
            self.step(now)?;
            match self.next_wake(now) {
                None => break true,
                Some(t) if t > self.horizon => break false,
                Some(t) => now = t,
            }
        };
        Ok(self.finish(now, terminated))
    }

    pub fn finish(mut self, end: f64, terminated: bool) -> (Vec<Record>, TrialOutcome) {
        let completed = self.completed();
        let failure = (!completed).then(|| classify_failure(&self.trace));
        self.trace.push(Record::TrialEnd {
            trial: self.trial,
            t: end,
            completed,
            terminated,
            failure: failure.clone(),
        });
        let outcome = TrialOutcome {
            trial: self.trial,
            completed,
            terminated,
            failure,
            end,
        };
        (self.trace, outcome)
    }
}

/// Hardware first, then the first wrong oracle answer, then whatever the
/// agents said.
pub fn classify_failure(trace: &[Record]) -> String {
    let loop_failures: Vec<String> = trace
        .iter()
        .filter_map(|r| match r {
            Record::Loop(e) if e.kind == EventKind::TaskFailed => {
                Some(e.payload.get("reason").and_then(|v| v.as_str()).unwrap_or("failed").to_string())
            }
            _ => None,
        })
        .collect();
    if loop_failures.iter().any(|r| r == "hardware failure") {
        return "hardware".into();
    }
    let wrong = trace.iter().find_map(|r| match r {
        Record::Vqa(v) if !v.correct => Some(v.category),
        _ => None,
    });
    if let Some(c) = wrong {
        return format!("vqa:{c}");
    }
    loop_failures.into_iter().next().unwrap_or_else(|| "incomplete".into())
}

pub fn run_trial(
    scenario: &Scenario,
    entropy: &mut dyn Entropy,
    trial: u64,
    seed: u64,
) -> Result<(Vec<Record>, TrialOutcome), SimError> {
    Episode::simulated(scenario, entropy, trial, seed)?.run()
}

/// `trials` independent seeded trials; the trace holds them back to back.
pub fn run_trials(scenario: &Scenario, seed: u64, trials: u64) -> Result<(Vec<Record>, Vec<TrialOutcome>), SimError> {
    let mut trace = Vec::new();
    let mut outcomes = Vec::new();
    for trial in 0..trials {
        let (t, o) = run_trial(scenario, &mut Seeded { master: seed, trial }, trial, seed)?;
        trace.extend(t);
        outcomes.push(o);
    }
    Ok((trace, outcomes))
}
