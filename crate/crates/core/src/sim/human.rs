//! Simulated people who answer help requests on the board.

use std::collections::{BTreeMap, BTreeSet};

use vader_hrfs::{
    AgentKind, Board, ClaimOutcome, Preference, Profile, Session, Subscription, Task, TaskFilter, TaskStatus,
    UpdateRequest,
};

use super::HumanConfig;
use crate::rng::Randomness;
use crate::runtime::RuntimeError;
use crate::world::{Effect, WorldState};

#[derive(Debug, Clone, PartialEq)]
enum State {
    Idle,
    Responding { task: String, until: f64 },
    Acting { task: String, until: f64 },
}

pub struct SimHuman {
    id: String,
    session: Session,
    sub: Subscription,
    cache: BTreeMap<String, Task>,
    config: HumanConfig,
    rng: Box<dyn Randomness>,
    declined: BTreeSet<String>,
    state: State,
}

impl SimHuman {
    pub fn join(board: &Board, id: &str, config: HumanConfig, rng: Box<dyn Randomness>) -> Result<Self, RuntimeError> {
        let (session, snapshot) = board.join(Profile::new(id, AgentKind::Human))?;
        let sub = board.subscribe(&session, TaskFilter::all(), Some(snapshot.cursor))?;
        Ok(SimHuman {
            id: id.to_string(),
            session,
            sub,
            cache: snapshot.tasks.into_iter().map(|t| (t.id.clone(), t)).collect(),
            config,
            rng,
            declined: BTreeSet::new(),
            state: State::Idle,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn heartbeat(&self, board: &Board) {
        if let Err(e) = board.heartbeat(&self.session) {
            log::warn!("{}: heartbeat failed: {e}", self.id);
        }
    }

    pub fn wake_at(&self) -> Option<f64> {
        match &self.state {
            State::Idle => None,
            State::Responding { until, .. } | State::Acting { until, .. } => Some(*until),
        }
    }

    fn drain(&mut self) -> bool {
        let events = self.sub.drain();
        let any = !events.is_empty();
        for t in events.iter().filter_map(|e| e.task()) {
            if self.cache.get(&t.id).is_none_or(|c| c.version < t.version) {
                self.cache.insert(t.id.clone(), t.clone());
            }
        }
        any
    }

    fn wanted(&self) -> Option<Task> {
        self.cache
            .values()
            .filter(|t| {
                t.status == TaskStatus::Posted
                    && matches!(t.executor_preference, Preference::Human | Preference::Any)
                    && t.payload.target.as_deref().is_none_or(|x| x == self.id)
                    && !self.declined.contains(&t.id)
            })
            .min_by(|a, b| a.id.cmp(&b.id))
            .cloned()
    }

    pub fn tick(&mut self, now: f64, board: &Board, world: &mut WorldState) -> Result<bool, RuntimeError> {
        let mut progress = self.drain();
        match self.state.clone() {
            State::Idle => {
                if let Some(t) = self.wanted() {
                    if self.rng.chance(self.config.compliance) {
                        self.state = State::Responding {
                            task: t.id,
                            until: now + self.config.response_delay,
                        };
                    } else {
                        log::debug!("{} ignores {}", self.id, t.id);
                        self.declined.insert(t.id);
                    }
                    progress = true;
                }
            }
            State::Responding { task, until } if until <= now => {
                progress = true;
                self.state = State::Idle;
                let Some(t) = self.cache.get(&task).filter(|t| t.status == TaskStatus::Posted).cloned() else {
                    return Ok(progress);
                };
                if let ClaimOutcome::Ok(t) = board.claim_task(&self.session, &task, t.version, false)? {
                    self.cache.insert(t.id.clone(), t);
                    let t = board.update_task(&self.session, &task, UpdateRequest::status(TaskStatus::InProgress))?;
                    self.cache.insert(t.id.clone(), t);
                    self.state = State::Acting {
                        task,
                        until: now + self.config.action_duration,
                    };
                }
            }
            State::Acting { task, until } if until <= now => {
                progress = true;
                self.state = State::Idle;
                let effects = self.cache.get(&task).and_then(|t| t.payload.effects.clone());
                let outcome = match effects {
                    None => TaskStatus::Done,
                    Some(v) => match serde_json::from_value::<Vec<Effect>>(v) {
                        Ok(effects) => {
                            let mut next = world.clone();
                            match effects.iter().try_for_each(|e| next.apply(&e.bind(&self.id))) {
                                Ok(()) => {
                                    *world = next;
                                    TaskStatus::Done
                                }
                                Err(e) => {
                                    log::warn!("{}: cannot do {task}: {e}", self.id);
                                    TaskStatus::Failed
                                }
                            }
                        }
                        Err(e) => {
                            log::warn!("{}: unreadable effects on {task}: {e}", self.id);
                            TaskStatus::Failed
                        }
                    },
                };
                let t = board.update_task(&self.session, &task, UpdateRequest::status(outcome))?;
                self.cache.insert(t.id.clone(), t);
            }
            _ => {}
        }
        Ok(progress)
    }
}
