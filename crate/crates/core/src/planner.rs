//! Template planner: skill selection from an instruction and the context
//! history, the outcome table, assessment and context construction.
//!
//! Selection is a pure replay of the history against the instruction's
//! template. Each failed step walks a recovery ladder: retries, then help
//! from a robot, then help from a human, then giving up.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::Randomness;
use crate::skills::SkillLibrary;
use crate::vqa::{Category, Resolver, VqaAdapter, VqaError, VqaQuery};
use crate::world::{Effect, Observation, Tool, WorldState};

pub const DONE: &str = "done";
pub const GIVE_UP: &str = "give up";
pub const RETURN_TASK: &str = "return task";
pub const ROBOT_HELP_PREFIX: &str = "ask for help: ";
pub const HUMAN_HELP_PREFIX: &str = "ask a human for help: ";
pub const UNKNOWN_ANSWER: &str = "unknown";
pub const DEFAULT_RETRIES: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("unplannable instruction: {0}")]
    Unplannable(String),
    #[error("no outcome entry for {0}")]
    NoOutcome(String),
    #[error("history diverges from the template at {0:?}")]
    Diverged(String),
    #[error("invalid plan configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Vqa(#[from] VqaError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Closed,
    Open,
}

fn yes_no() -> Vec<String> {
    vec!["yes".into(), "no".into()]
}

/// How to check that a skill did what it should.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeEntry {
    pub skill: String,
    pub expected: String,
    pub question: String,
    /// Short form of the question used in the context string.
    pub fragment: String,
    #[serde(default = "yes_no")]
    pub candidates: Vec<String>,
    /// `None` for purely informational checks, which succeed on any
    /// recognised answer.
    #[serde(default)]
    pub success_answer: Option<String>,
    pub category: Category,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolver: Option<Resolver>,
}

impl OutcomeEntry {
    pub fn is_success(&self, assessment: &str) -> bool {
        match &self.success_answer {
            Some(s) => s == assessment,
            None => assessment != UNKNOWN_ANSWER && self.candidates.iter().any(|c| c == assessment),
        }
    }

    /// Entry used for help actions: did the helper finish?
    pub fn for_help(action: &str) -> OutcomeEntry {
        OutcomeEntry {
            skill: action.to_string(),
            expected: "help task completed".into(),
            question: "was the help task completed?".into(),
            fragment: "help completed?".into(),
            candidates: yes_no(),
            success_answer: Some("yes".into()),
            category: Category::Generic,
            mode: Mode::Closed,
            target: None,
            resolver: None,
        }
    }

    pub fn for_return() -> OutcomeEntry {
        OutcomeEntry {
            fragment: "task returned?".into(),
            expected: "task back on the board".into(),
            question: "was the task returned?".into(),
            ..OutcomeEntry::for_help(RETURN_TASK)
        }
    }
}

/// One executed step as fed back to the planner.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextEntry {
    pub skill: String,
    pub expected: String,
    pub assessment: String,
    pub canonical: String,
}

impl ContextEntry {
    pub fn terminal(word: &str) -> ContextEntry {
        ContextEntry {
            skill: word.into(),
            expected: String::new(),
            assessment: String::new(),
            canonical: word.into(),
        }
    }

    pub fn is_done(&self) -> bool {
        self.canonical == DONE
    }
}

/// `"<skill>. <fragment> <assessment>"`.
pub fn build_context(skill: &str, entry: &OutcomeEntry, assessment: &str) -> ContextEntry {
    ContextEntry {
        skill: skill.to_string(),
        expected: entry.expected.clone(),
        assessment: assessment.to_string(),
        canonical: format!("{skill}. {} {assessment}", entry.fragment),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Guard {
    #[default]
    Always,
    /// Only while the agent does not yet know its tool.
    ToolUnknown,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HelpSpec {
    pub instruction: String,
    #[serde(default = "yes")]
    pub allow_robot: bool,
    #[serde(default = "yes")]
    pub allow_human: bool,
    /// What a human completing the task is expected to change.
    #[serde(default)]
    pub effects: Vec<Effect>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanStep {
    pub skill: String,
    #[serde(default)]
    pub guard: Guard,
    /// Retries before asking for help. Defaults to the planner-wide budget
    /// for acting skills and to zero for information gathering.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retries: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub help: Option<HelpSpec>,
}

impl PlanStep {
    pub fn new(skill: &str) -> Self {
        PlanStep {
            skill: skill.into(),
            guard: Guard::Always,
            retries: None,
            help: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanTemplate {
    pub instruction: String,
    #[serde(default)]
    pub required_tool: Option<Tool>,
    pub steps: Vec<PlanStep>,
    /// Instruction the agent takes up on its own after finishing this one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub followup: Option<String>,
}

/// Deliberate damage to a template, modelling a wrong plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Corruption {
    DropStep { instruction: String, skill: String },
    SwapSteps { instruction: String, a: String, b: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rung {
    Robot,
    Human,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    Skill { name: String },
    AskHelp { help: HelpSpec, rung: Rung },
    ReturnTask,
    Done,
    GiveUp,
}

impl Action {
    pub fn name(&self) -> String {
        match self {
            Action::Skill { name } => name.clone(),
            Action::AskHelp { help, rung: Rung::Robot } => format!("{ROBOT_HELP_PREFIX}{}", help.instruction),
            Action::AskHelp { help, rung: Rung::Human } => format!("{HUMAN_HELP_PREFIX}{}", help.instruction),
            Action::ReturnTask => RETURN_TASK.into(),
            Action::Done => DONE.into(),
            Action::GiveUp => GIVE_UP.into(),
        }
    }
}

/// Planner output: a score per candidate action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSkills {
    pub scores: BTreeMap<String, f64>,
    pub argmax: String,
}

/// Serializable planning request for an external planner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerRequest {
    pub instruction: String,
    pub context: Vec<String>,
    pub tool: Tool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    #[serde(default = "default_retries")]
    pub retries: u32,
    /// Simulated seconds each planning call takes.
    #[serde(default)]
    pub latency: f64,
    #[serde(default)]
    pub corruption: Vec<Corruption>,
}

fn default_retries() -> u32 {
    DEFAULT_RETRIES
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            retries: DEFAULT_RETRIES,
            latency: 0.0,
            corruption: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Planner {
    outcomes: BTreeMap<String, OutcomeEntry>,
    templates: BTreeMap<String, PlanTemplate>,
    info_skills: BTreeSet<String>,
    vocabulary: BTreeSet<String>,
    config: PlannerConfig,
}

enum Ladder {
    Retry,
    Help(Rung),
}

impl Planner {
    pub fn new(
        library: &SkillLibrary,
        outcomes: Vec<OutcomeEntry>,
        templates: Vec<PlanTemplate>,
        config: PlannerConfig,
    ) -> Result<Self, PlanError> {
        let outcomes: BTreeMap<String, OutcomeEntry> = outcomes.into_iter().map(|o| (o.skill.clone(), o)).collect();
        for o in outcomes.values() {
            if let Some(s) = &o.success_answer {
                if !o.candidates.contains(s) {
                    return Err(PlanError::Invalid(format!("success answer {s:?} of {:?} is not a candidate", o.skill)));
                }
            }
            if o.mode == Mode::Closed && o.candidates.is_empty() {
                return Err(PlanError::Invalid(format!("{:?} has no candidates", o.skill)));
            }
        }
        let mut vocabulary: BTreeSet<String> = library.skills.keys().cloned().collect();
        for t in &templates {
            for s in &t.steps {
                library
                    .get(&s.skill)
                    .map_err(|_| PlanError::Invalid(format!("template {:?} uses unknown skill {:?}", t.instruction, s.skill)))?;
                if !outcomes.contains_key(&s.skill) {
                    return Err(PlanError::NoOutcome(s.skill.clone()));
                }
                if let Some(h) = &s.help {
                    if h.allow_robot {
                        vocabulary.insert(format!("{ROBOT_HELP_PREFIX}{}", h.instruction));
                    }
                    if h.allow_human {
                        vocabulary.insert(format!("{HUMAN_HELP_PREFIX}{}", h.instruction));
                    }
                }
            }
        }
        for t in &templates {
            if let Some(f) = &t.followup {
                if !templates.iter().any(|o| &o.instruction == f) {
                    return Err(PlanError::Invalid(format!("followup {f:?} has no template")));
                }
            }
        }
        vocabulary.extend([DONE, GIVE_UP, RETURN_TASK].map(String::from));
        let info_skills = library
            .skills
            .values()
            .filter(|s| s.info_gathering)
            .map(|s| s.name.clone())
            .collect();
        Ok(Planner {
            outcomes,
            templates: templates.into_iter().map(|t| (t.instruction.clone(), t)).collect(),
            info_skills,
            vocabulary,
            config,
        })
    }

    pub fn latency(&self) -> f64 {
        self.config.latency
    }

    pub fn config(&self) -> &PlannerConfig {
        &self.config
    }

    pub fn has_template(&self, instruction: &str) -> bool {
        self.templates.contains_key(instruction)
    }

    /// The template as the planner will use it, corruption included.
    pub fn template(&self, instruction: &str) -> Result<PlanTemplate, PlanError> {
        let mut t = self
            .templates
            .get(instruction)
            .cloned()
            .ok_or_else(|| PlanError::Unplannable(instruction.to_string()))?;
        for c in &self.config.corruption {
            match c {
                Corruption::DropStep { instruction: i, skill } if i == instruction => t.steps.retain(|s| &s.skill != skill),
                Corruption::SwapSteps { instruction: i, a, b } if i == instruction => {
                    let ia = t.steps.iter().position(|s| &s.skill == a);
                    let ib = t.steps.iter().position(|s| &s.skill == b);
                    if let (Some(ia), Some(ib)) = (ia, ib) {
                        t.steps.swap(ia, ib);
                    }
                }
                _ => {}
            }
        }
        Ok(t)
    }

    pub fn describe_outcome(&self, skill: &str) -> Result<OutcomeEntry, PlanError> {
        if skill.starts_with(ROBOT_HELP_PREFIX) || skill.starts_with(HUMAN_HELP_PREFIX) {
            return Ok(OutcomeEntry::for_help(skill));
        }
        if skill == RETURN_TASK {
            return Ok(OutcomeEntry::for_return());
        }
        self.outcomes.get(skill).cloned().ok_or_else(|| PlanError::NoOutcome(skill.to_string()))
    }

    fn retries(&self, step: &PlanStep) -> u32 {
        step.retries.unwrap_or(if self.info_skills.contains(&step.skill) {
            0
        } else {
            self.config.retries
        })
    }

    fn ladder(&self, step: &PlanStep) -> Vec<Ladder> {
        let mut l: Vec<Ladder> = (0..self.retries(step)).map(|_| Ladder::Retry).collect();
        if let Some(h) = &step.help {
            if h.allow_robot {
                l.push(Ladder::Help(Rung::Robot));
            }
            if h.allow_human {
                l.push(Ladder::Help(Rung::Human));
            }
        }
        l
    }

    /// Upper bound on loop iterations for one instruction, whatever the
    /// assessments turn out to be.
    pub fn max_steps(&self, instruction: &str) -> Result<usize, PlanError> {
        let t = self.template(instruction)?;
        let per_step: usize = t
            .steps
            .iter()
            .map(|s| {
                let helps = self.ladder(s).iter().filter(|l| matches!(l, Ladder::Help(_))).count();
                1 + self.retries(s) as usize + 2 * helps
            })
            .sum();
        Ok(per_step + 1)
    }

    /// The next action given everything done so far.
    pub fn plan(&self, instruction: &str, history: &[ContextEntry], tool: Tool) -> Result<Action, PlanError> {
        let t = self.template(instruction)?;
        let steps = &t.steps;
        let guard_holds = |s: &PlanStep, next: Option<&str>| match s.guard {
            Guard::Always => true,
            // a guarded step that appears in the history evidently ran
            Guard::ToolUnknown => next == Some(s.skill.as_str()) || tool == Tool::Unknown,
        };
        let skip = |mut i: usize, next: Option<&str>| {
            while i < steps.len() && !guard_holds(&steps[i], next) {
                i += 1;
            }
            i
        };

        let mut idx = 0;
        let mut failures = 0usize;
        let mut rerun = false;
        for e in history {
            match e.canonical.as_str() {
                DONE => return Ok(Action::Done),
                GIVE_UP => return Ok(Action::GiveUp),
                _ => {}
            }
            if e.skill == RETURN_TASK {
                return Ok(Action::ReturnTask);
            }
            idx = skip(idx, Some(&e.skill));
            if e.skill.starts_with(ROBOT_HELP_PREFIX) || e.skill.starts_with(HUMAN_HELP_PREFIX) {
                if e.assessment == "yes" {
                    rerun = true;
                } else {
                    failures += 1;
                    rerun = false;
                }
                continue;
            }
            let step = steps.get(idx).filter(|s| s.skill == e.skill).ok_or_else(|| PlanError::Diverged(e.canonical.clone()))?;
            rerun = false;
            if self.describe_outcome(&step.skill)?.is_success(&e.assessment) {
                idx += 1;
                failures = 0;
            } else {
                failures += 1;
            }
        }

        if let (Some(need), true) = (t.required_tool, tool != Tool::Unknown) {
            if need != tool {
                return Ok(Action::ReturnTask);
            }
        }
        let idx = skip(idx, None);
        let Some(step) = steps.get(idx) else {
            return Ok(Action::Done);
        };
        if failures == 0 || rerun {
            return Ok(Action::Skill { name: step.skill.clone() });
        }
        Ok(match self.ladder(step).get(failures - 1) {
            Some(Ladder::Retry) => Action::Skill { name: step.skill.clone() },
            Some(Ladder::Help(rung)) => Action::AskHelp {
                help: step.help.clone().expect("help rung implies help spec"),
                rung: *rung,
            },
            None => Action::GiveUp,
        })
    }

    /// Scores over every action the planner knows; the planned action wins.
    pub fn next_skill(&self, instruction: &str, history: &[ContextEntry], tool: Tool) -> Result<ScoredSkills, PlanError> {
        let action = self.plan(instruction, history, tool)?;
        let chosen = action.name();
        let template = self.template(instruction)?;
        let mut scores: BTreeMap<String, f64> = self.vocabulary.iter().map(|v| (v.clone(), 0.0)).collect();
        for s in &template.steps {
            scores.insert(s.skill.clone(), 0.05);
        }
        scores.insert(chosen.clone(), 0.9);
        Ok(ScoredSkills { scores, argmax: chosen })
    }

    pub fn request(&self, instruction: &str, history: &[ContextEntry], tool: Tool) -> PlannerRequest {
        PlannerRequest {
            instruction: instruction.to_string(),
            context: history.iter().map(|c| c.canonical.clone()).collect(),
            tool,
        }
    }
}

/// Result of checking an outcome with the oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assessment {
    pub answer: String,
    pub truth: String,
}

impl Assessment {
    pub fn correct(&self) -> bool {
        self.answer == self.truth
    }
}

/// Ask the oracle whether `entry`'s expected outcome holds. Open-set
/// answers outside the candidate list come back as `"unknown"`.
pub fn assess(
    entry: &OutcomeEntry,
    observation: &Observation,
    oracle: &mut dyn VqaAdapter,
    world: &WorldState,
    rng: &mut dyn Randomness,
) -> Result<Assessment, PlanError> {
    let q = VqaQuery {
        observation: observation.clone(),
        question: entry.question.clone(),
        candidates: (entry.mode == Mode::Closed).then(|| entry.candidates.clone()),
        category: entry.category,
        target: entry.target.clone(),
        resolver: entry.resolver.clone(),
    };
    let a = oracle.answer(&q, world, rng)?;
    let answer = if entry.mode == Mode::Open && !entry.candidates.is_empty() && !entry.candidates.contains(&a.text) {
        UNKNOWN_ANSWER.to_string()
    } else {
        a.text
    };
    Ok(Assessment { answer, truth: a.truth })
}
