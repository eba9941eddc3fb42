//! Skill definitions and simulated execution with fault injection.
//!
//! Failure modes: the environment may not afford the skill (an unmet
//! precondition the policy does not check itself), the policy may report
//! success without effect (silent), or report failure (alerting). A
//! required-tool mismatch is an alerting failure.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::Randomness;
use crate::world::{Effect, Observation, Placement, Tool, WorldError, WorldState, SELF};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SkillError {
    #[error("unknown skill: {0}")]
    UnknownSkill(String),
    #[error("{0} is not an information-gathering skill")]
    NotInfoGathering(String),
    #[error("agent {0} has failed permanently")]
    AgentFailed(String),
    #[error(transparent)]
    World(#[from] WorldError),
}

/// A predicate over world state, evaluated for the executing agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Precondition {
    PathTo { location: String },
    SurfaceClear { surface: String },
    ObjectAt { object: String, at: Placement },
    AgentAt { location: String },
}

impl Precondition {
    pub fn holds(&self, world: &WorldState, agent: &str) -> Result<bool, WorldError> {
        let me = world.agent(agent)?;
        Ok(match self {
            Precondition::PathTo { location } => world.path_exists(&me.at, location)?,
            Precondition::SurfaceClear { surface } => world
                .surfaces
                .get(surface)
                .map(|s| s.clutter.is_empty())
                .ok_or_else(|| WorldError::Invalid(format!("no surface {surface}")))?,
            Precondition::ObjectAt { object, at } => {
                let at = match at {
                    Placement::Agent(a) if a == SELF => Placement::Agent(agent.to_string()),
                    other => other.clone(),
                };
                world.objects.get(object).is_some_and(|o| o.at == at)
            }
            Precondition::AgentAt { location } => me.at == *location,
        })
    }

    fn describe(&self) -> String {
        match self {
            Precondition::PathTo { location } => format!("no path to {location}"),
            Precondition::SurfaceClear { surface } => format!("{surface} is not clear"),
            Precondition::ObjectAt { object, .. } => format!("{object} not in place"),
            Precondition::AgentAt { location } => format!("not at {location}"),
        }
    }
}

/// Which part of the world a skill's observation covers.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    /// The agent's current location.
    #[default]
    Here,
    /// The agent's own body; includes its tool.
    SelfBody,
    Locations(Vec<String>),
}

impl Region {
    pub fn resolve(&self, world: &WorldState, agent: &str) -> Result<BTreeSet<String>, WorldError> {
        Ok(match self {
            Region::Here | Region::SelfBody => BTreeSet::from([world.agent(agent)?.at.clone()]),
            Region::Locations(ls) => ls.iter().cloned().collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skill {
    pub name: String,
    /// `None` means any agent can run it.
    #[serde(default)]
    pub required_tool: Option<Tool>,
    #[serde(default)]
    pub preconditions: Vec<Precondition>,
    #[serde(default)]
    pub effects: Vec<Effect>,
    pub duration: f64,
    #[serde(default)]
    pub info_gathering: bool,
    /// The policy verifies its own preconditions and alerts when they fail.
    #[serde(default)]
    pub self_checking: bool,
    #[serde(default)]
    pub observe: Region,
}

impl Skill {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(format!("skill {:?}: duration must be positive", self.name));
        }
        if self.info_gathering && !self.effects.is_empty() {
            return Err(format!("skill {:?}: information-gathering skills have no effects", self.name));
        }
        Ok(())
    }
}

/// The skill set shared by every robot in a scenario.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SkillLibrary {
    pub skills: BTreeMap<String, Skill>,
}

impl SkillLibrary {
    pub fn new(skills: impl IntoIterator<Item = Skill>) -> Self {
        SkillLibrary {
            skills: skills.into_iter().map(|s| (s.name.clone(), s)).collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<&Skill, SkillError> {
        self.skills.get(name).ok_or_else(|| SkillError::UnknownSkill(name.to_string()))
    }

    pub fn names(&self) -> BTreeSet<&str> {
        self.skills.keys().map(String::as_str).collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SkillFaults {
    #[serde(default)]
    pub p_silent: f64,
    #[serde(default)]
    pub p_alert: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FaultConfig {
    /// Rates for skills without their own entry.
    #[serde(default)]
    pub default: SkillFaults,
    #[serde(default)]
    pub per_skill: BTreeMap<String, SkillFaults>,
    /// Probability that an agent suffers a permanent hardware failure
    /// during an episode.
    #[serde(default)]
    pub p_hardware: f64,
    #[serde(default)]
    pub hardware_overrides: BTreeMap<String, f64>,
}

impl FaultConfig {
    pub fn for_skill(&self, name: &str) -> SkillFaults {
        self.per_skill.get(name).copied().unwrap_or(self.default)
    }

    pub fn p_hardware_for(&self, agent: &str) -> f64 {
        self.hardware_overrides.get(agent).copied().unwrap_or(self.p_hardware)
    }

    pub fn validate(&self) -> Result<(), String> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        for (name, f) in std::iter::once(("default", &self.default)).chain(self.per_skill.iter().map(|(k, v)| (k.as_str(), v))) {
            if !prob(f.p_silent) || !prob(f.p_alert) || f.p_silent + f.p_alert > 1.0 {
                return Err(format!("fault rates for {name} out of range"));
            }
        }
        if !prob(self.p_hardware) || !self.hardware_overrides.values().all(|p| prob(*p)) {
            return Err("hardware failure probability out of range".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reported {
    Success,
    Failure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    Nominal,
    /// Reported success, nothing happened.
    Silent,
    /// Reported success, but the world did not afford the skill.
    Infeasible,
    Alert,
    ToolMismatch,
    /// A self-checking policy found a precondition false.
    PreconditionAlert,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillOutcome {
    pub reported: Reported,
    pub effect_applied: bool,
    pub duration: f64,
    pub kind: OutcomeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl SkillOutcome {
    fn new(skill: &Skill, kind: OutcomeKind, reason: Option<String>) -> Self {
        let (reported, effect_applied) = match kind {
            OutcomeKind::Nominal => (Reported::Success, true),
            OutcomeKind::Silent | OutcomeKind::Infeasible => (Reported::Success, false),
            OutcomeKind::Alert | OutcomeKind::ToolMismatch | OutcomeKind::PreconditionAlert => (Reported::Failure, false),
        };
        SkillOutcome {
            reported,
            effect_applied,
            duration: skill.duration,
            kind,
            reason,
        }
    }
}

/// Run `skill` for `agent` against the world as it is now, without moving
/// the clock. One fault draw is made unless the attempt fails before the
/// policy starts (tool mismatch, self-checked precondition).
pub fn attempt(
    world: &mut WorldState,
    agent: &str,
    skill: &Skill,
    faults: &FaultConfig,
    rng: &mut dyn Randomness,
) -> Result<SkillOutcome, SkillError> {
    let me = world.agent(agent)?;
    if me.hardware_failed {
        return Err(SkillError::AgentFailed(agent.to_string()));
    }
    if let Some(tool) = skill.required_tool {
        if me.tool != tool {
            return Ok(SkillOutcome::new(skill, OutcomeKind::ToolMismatch, Some("tool mismatch".into())));
        }
    }
    let mut unmet = None;
    for p in &skill.preconditions {
        if !p.holds(world, agent)? {
            unmet = Some(p.describe());
            break;
        }
    }
    if skill.self_checking {
        if let Some(why) = unmet {
            return Ok(SkillOutcome::new(skill, OutcomeKind::PreconditionAlert, Some(why)));
        }
    }
    let f = faults.for_skill(&skill.name);
    let draw = rng.pick(&[1.0 - f.p_silent - f.p_alert, f.p_silent, f.p_alert]);
    Ok(match (draw, unmet) {
        (0, None) => {
            let mut next = world.clone();
            for e in &skill.effects {
                next.apply(&e.bind(agent))?;
            }
            *world = next;
            SkillOutcome::new(skill, OutcomeKind::Nominal, None)
        }
        (0, Some(why)) => SkillOutcome::new(skill, OutcomeKind::Infeasible, Some(why)),
        (1, _) => SkillOutcome::new(skill, OutcomeKind::Silent, None),
        _ => SkillOutcome::new(skill, OutcomeKind::Alert, Some("policy reported failure".into())),
    })
}

/// [`attempt`] followed by advancing the clock by the skill's duration,
/// whatever the outcome.
pub fn execute_skill(
    world: &WorldState,
    agent: &str,
    skill: &Skill,
    faults: &FaultConfig,
    rng: &mut dyn Randomness,
) -> Result<(WorldState, SkillOutcome), SkillError> {
    let mut next = world.clone();
    let outcome = attempt(&mut next, agent, skill, faults, rng)?;
    next.apply(&Effect::AdvanceClock { seconds: skill.duration })?;
    Ok((next, outcome))
}

/// Observation produced by an information-gathering skill.
pub fn observe_for(world: &WorldState, agent: &str, skill: &Skill) -> Result<Observation, SkillError> {
    let region = skill.observe.resolve(world, agent)?;
    Ok(world.observe(agent, &region)?)
}

/// Run an information-gathering skill: advance the clock and observe the
/// skill's region.
pub fn run_info_skill(world: &mut WorldState, agent: &str, skill: &Skill) -> Result<Observation, SkillError> {
    if !skill.info_gathering {
        return Err(SkillError::NotInfoGathering(skill.name.clone()));
    }
    if world.agent(agent)?.hardware_failed {
        return Err(SkillError::AgentFailed(agent.to_string()));
    }
    world.apply(&Effect::AdvanceClock { seconds: skill.duration })?;
    observe_for(world, agent, skill)
}
