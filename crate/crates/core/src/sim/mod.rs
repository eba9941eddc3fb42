//! Deterministic multi-agent simulation: scenario files, the episode
//! scheduler, simulated humans, traces and the metrics drawn from them.

pub mod harness;
pub mod human;
pub mod live;
pub mod metrics;
pub mod oracle;
pub mod trace;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use vader_hrfs::Preference;

use crate::planner::{OutcomeEntry, PlanError, PlanTemplate, Planner, PlannerConfig};
use crate::skills::{FaultConfig, Skill, SkillLibrary};
use crate::vqa::NoiseConfig;
use crate::world::WorldState;

pub use harness::{run_trial, run_trials, Episode, TrialOutcome};
pub use metrics::{report, Report, TrialMetrics};
pub use oracle::{derive_completion_probability, fit_hardware_rate, OracleResult};
pub use trace::Record;

pub const DEFAULT_HORIZON: f64 = 7200.0;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Plan(#[from] PlanError),
}

fn one() -> f64 {
    1.0
}

fn thirty() -> f64 {
    30.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanConfig {
    /// Chance the human takes on a given request at all.
    #[serde(default = "one")]
    pub compliance: f64,
    /// Seconds between a request appearing and the human claiming it.
    #[serde(default = "thirty")]
    pub response_delay: f64,
    #[serde(default = "thirty")]
    pub action_duration: f64,
}

impl Default for HumanConfig {
    fn default() -> Self {
        HumanConfig {
            compliance: 1.0,
            response_delay: 30.0,
            action_duration: 30.0,
        }
    }
}

/// A task the operator puts on the board.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootTask {
    pub instruction: String,
    #[serde(default = "robot")]
    pub preference: Preference,
    #[serde(default)]
    pub target: Option<String>,
    #[serde(default)]
    pub at: f64,
}

fn robot() -> Preference {
    Preference::Robot
}

/// A scheduled network outage for one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outage {
    pub agent: String,
    pub at: f64,
    pub duration: f64,
}

fn default_liveness() -> f64 {
    vader_hrfs::board::DEFAULT_LIVENESS
}

fn default_horizon() -> f64 {
    DEFAULT_HORIZON
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub world: WorldState,
    pub skills: Vec<Skill>,
    pub outcomes: Vec<OutcomeEntry>,
    pub templates: Vec<PlanTemplate>,
    #[serde(default)]
    pub planner: PlannerConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub faults: FaultConfig,
    /// Behaviour of each simulated human; humans in the world without an
    /// entry use the defaults.
    #[serde(default)]
    pub humans: BTreeMap<String, HumanConfig>,
    pub tasks: Vec<RootTask>,
    #[serde(default)]
    pub outages: Vec<Outage>,
    #[serde(default = "default_liveness")]
    pub liveness: f64,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
}

impl Scenario {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn library(&self) -> SkillLibrary {
        SkillLibrary::new(self.skills.clone())
    }

    pub fn build_planner(&self) -> Result<Planner, ScenarioError> {
        Ok(Planner::new(
            &self.library(),
            self.outcomes.clone(),
            self.templates.clone(),
            self.planner.clone(),
        )?)
    }

    pub fn robots(&self) -> Vec<String> {
        self.world.agents.keys().cloned().collect()
    }

    pub fn human_config(&self, id: &str) -> HumanConfig {
        self.humans.get(id).cloned().unwrap_or_default()
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        self.world.validate().map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        for s in &self.skills {
            s.validate().map_err(ScenarioError::Invalid)?;
        }
        self.noise.validate().map_err(ScenarioError::Invalid)?;
        self.faults.validate().map_err(ScenarioError::Invalid)?;
        self.build_planner()?;
        for id in self.humans.keys() {
            if !self.world.humans.contains_key(id) {
                return bad(format!("human {id} is not in the world"));
            }
        }
        for h in self.humans.values() {
            if !(0.0..=1.0).contains(&h.compliance) || h.response_delay < 0.0 || h.action_duration < 0.0 {
                return bad("human behaviour out of range".into());
            }
        }
        for t in &self.tasks {
            if let Some(target) = &t.target {
                if !self.world.agents.contains_key(target) && !self.world.humans.contains_key(target) {
                    return bad(format!("task target {target} is not in the world"));
                }
            }
        }
        for o in &self.outages {
            if !self.world.agents.contains_key(&o.agent) || o.duration < 0.0 {
                return bad(format!("bad outage for {}", o.agent));
            }
        }
        if self.liveness <= 0.0 || self.horizon <= 0.0 {
            return bad("liveness and horizon must be positive".into());
        }
        Ok(())
    }
}
