//! Question answering over observations with calibrated noise.
//!
//! Closed-set queries return a score per candidate answer and the caller
//! takes the argmax; open-set queries return free text. Ground truth is read
//! from the world, and the configured accuracy decides how often the oracle
//! reports it.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::Randomness;
use crate::world::{Observation, Placement, WorldError, WorldState, SELF};

pub const TOP_SCORE: f64 = 0.55;
pub const RUNNER_UP_SCORE: f64 = 0.32;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VqaError {
    #[error("uncoverable truth: {truth:?} is not among {candidates:?}")]
    UncoverableTruth { truth: String, candidates: Vec<String> },
    #[error("unanswerable: {0}")]
    Unanswerable(String),
    #[error("closed-set query without candidates")]
    NoCandidates,
    #[error("empty question")]
    EmptyQuestion,
    #[error(transparent)]
    World(#[from] WorldError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    SelfInspection,
    ClutterCheck,
    LocationCheck,
    Generic,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::SelfInspection => "self_inspection",
            Category::ClutterCheck => "clutter_check",
            Category::LocationCheck => "location_check",
            Category::Generic => "generic",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// World predicates that answer generic yes/no questions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Resolver {
    SurfaceClean { surface: String },
    SurfaceClear { surface: String },
    ObjectAt { object: String, at: Placement },
    EdgeOpen { a: String, b: String },
    AgentAt { location: String },
}

impl Resolver {
    fn resolve(&self, world: &WorldState, viewer: &str) -> Result<bool, VqaError> {
        let missing = |what: &str| VqaError::Unanswerable(format!("no {what} in world"));
        Ok(match self {
            Resolver::SurfaceClean { surface } => world.surfaces.get(surface).ok_or_else(|| missing(surface))?.clean,
            Resolver::SurfaceClear { surface } => {
                world.surfaces.get(surface).ok_or_else(|| missing(surface))?.clutter.is_empty()
            }
            Resolver::ObjectAt { object, at } => {
                let at = match at {
                    Placement::Agent(a) if a == SELF => Placement::Agent(viewer.to_string()),
                    other => other.clone(),
                };
                world.objects.get(object).ok_or_else(|| missing(object))?.at == at
            }
            Resolver::EdgeOpen { a, b } => !world.edge_blocked(a, b).ok_or_else(|| missing("edge"))?,
            Resolver::AgentAt { location } => world.agent(viewer)?.at == *location,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqaQuery {
    pub observation: Observation,
    pub question: String,
    /// Present for closed-set queries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<String>>,
    pub category: Category,
    /// Surface for clutter checks, location for location checks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolver: Option<Resolver>,
}

/// Candidate scores and the selected answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerScores {
    pub scores: BTreeMap<String, f64>,
    pub argmax: String,
}

impl AnswerScores {
    /// Select the highest score; equal scores go to the smaller answer.
    pub fn from_scores(scores: BTreeMap<String, f64>) -> Option<Self> {
        let mut best: Option<(&String, f64)> = None;
        for (k, v) in &scores {
            if best.is_none_or(|(_, bv)| *v > bv) {
                best = Some((k, *v));
            }
        }
        let argmax = best?.0.clone();
        Some(AnswerScores { scores, argmax })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Probability that the true answer comes out on top, per category.
    /// Missing categories are answered perfectly.
    #[serde(default)]
    pub accuracy: BTreeMap<Category, f64>,
    #[serde(default = "default_gap")]
    pub score_gap: f64,
}

fn default_gap() -> f64 {
    0.1
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            accuracy: BTreeMap::new(),
            score_gap: default_gap(),
        }
    }
}

impl NoiseConfig {
    pub fn perfect() -> Self {
        NoiseConfig::default()
    }

    pub fn with(mut self, category: Category, accuracy: f64) -> Self {
        self.accuracy.insert(category, accuracy);
        self
    }

    pub fn accuracy(&self, c: Category) -> f64 {
        self.accuracy.get(&c).copied().unwrap_or(1.0)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.accuracy.values().any(|a| !(0.0..=1.0).contains(a)) {
            return Err("accuracy out of [0, 1]".into());
        }
        if !(0.0..=TOP_SCORE).contains(&self.score_gap) {
            return Err(format!("score_gap must lie in [0, {TOP_SCORE}]"));
        }
        Ok(())
    }
}

/// Scores with `top` first, then the rest in the given order.
fn synthesize(top: &str, rest: &[&String], gap: f64) -> BTreeMap<String, f64> {
    let runner = RUNNER_UP_SCORE.min(TOP_SCORE - gap);
    let mut scores = BTreeMap::from([(top.to_string(), TOP_SCORE)]);
    for (i, c) in rest.iter().enumerate() {
        scores.insert((*c).clone(), runner / (i + 1) as f64);
    }
    scores
}

pub fn answer_closed(
    q: &VqaQuery,
    truth: &str,
    noise: &NoiseConfig,
    rng: &mut dyn Randomness,
) -> Result<AnswerScores, VqaError> {
    let candidates = q.candidates.as_ref().filter(|c| !c.is_empty()).ok_or(VqaError::NoCandidates)?;
    if !candidates.iter().any(|c| c == truth) {
        return Err(VqaError::UncoverableTruth {
            truth: truth.to_string(),
            candidates: candidates.clone(),
        });
    }
    let wrong: Vec<&String> = candidates.iter().filter(|c| *c != truth).collect();
    let top: &str = if wrong.is_empty() {
        truth
    } else {
        let acc = noise.accuracy(q.category);
        let miss = (1.0 - acc) / wrong.len() as f64;
        let mut weights = vec![acc];
        weights.extend(std::iter::repeat_n(miss, wrong.len()));
        match rng.pick(&weights) {
            0 => truth,
            i => wrong[i - 1].as_str(),
        }
    };
    let rest: Vec<&String> = candidates.iter().filter(|c| *c != top).collect();
    Ok(AnswerScores::from_scores(synthesize(top, &rest, noise.score_gap)).expect("non-empty"))
}

/// The wrong answer an open-set oracle gives for `truth`.
pub fn distractor(truth: &str, candidates: Option<&[String]>) -> String {
    match truth {
        "yes" => return "no".into(),
        "no" => return "yes".into(),
        "gripper" => return "wiper".into(),
        "wiper" => return "gripper".into(),
        _ => {}
    }
    candidates
        .and_then(|cs| cs.iter().find(|c| *c != truth).cloned())
        .unwrap_or_else(|| "unknown".into())
}

pub fn answer_open(q: &VqaQuery, truth: &str, noise: &NoiseConfig, rng: &mut dyn Randomness) -> Result<String, VqaError> {
    if q.question.trim().is_empty() {
        return Err(VqaError::EmptyQuestion);
    }
    let acc = noise.accuracy(q.category);
    Ok(if rng.pick(&[acc, 1.0 - acc]) == 0 {
        truth.to_string()
    } else {
        distractor(truth, q.candidates.as_deref())
    })
}

fn yes_no(b: bool) -> String {
    if b { "yes" } else { "no" }.to_string()
}

pub fn ground_truth_answer(q: &VqaQuery, world: &WorldState) -> Result<String, VqaError> {
    let viewer = q.observation.viewer.as_str();
    match q.category {
        Category::SelfInspection => Ok(world.agent(viewer)?.tool.as_str().to_string()),
        Category::ClutterCheck => {
            let surface = q
                .target
                .clone()
                .or_else(|| q.observation.visible_surfaces.first().map(|s| s.id.clone()))
                .ok_or_else(|| VqaError::Unanswerable("clutter check without a surface".into()))?;
            let s = world
                .surfaces
                .get(&surface)
                .ok_or_else(|| VqaError::Unanswerable(format!("no surface {surface}")))?;
            Ok(yes_no(s.clutter.is_empty()))
        }
        Category::LocationCheck => {
            let target = q
                .target
                .as_ref()
                .ok_or_else(|| VqaError::Unanswerable("location check without a location".into()))?;
            Ok(yes_no(world.agent(viewer)?.at == *target))
        }
        Category::Generic => match &q.resolver {
            Some(r) => Ok(yes_no(r.resolve(world, viewer)?)),
            None => Err(VqaError::Unanswerable(q.question.clone())),
        },
    }
}

/// What an oracle returned for one query, with the ground truth kept for
/// bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqaAnswer {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<AnswerScores>,
    pub truth: String,
}

impl VqaAnswer {
    pub fn correct(&self) -> bool {
        self.text == self.truth
    }
}

/// Anything that can answer queries: the simulated oracle here, or a bridge
/// to a real model speaking [`VqaRequest`]/[`VqaResponse`].
pub trait VqaAdapter {
    fn answer(&mut self, q: &VqaQuery, world: &WorldState, rng: &mut dyn Randomness) -> Result<VqaAnswer, VqaError>;
}

/// Noise-calibrated oracle over the simulated world.
#[derive(Debug, Clone, Default)]
pub struct SimulatedVqa {
    pub noise: NoiseConfig,
    tally: BTreeMap<Category, (u64, u64)>,
}

impl SimulatedVqa {
    pub fn new(noise: NoiseConfig) -> Self {
        SimulatedVqa {
            noise,
            tally: BTreeMap::new(),
        }
    }

    /// Per-category (correct, total) counts so far.
    pub fn tally(&self) -> &BTreeMap<Category, (u64, u64)> {
        &self.tally
    }
}

impl VqaAdapter for SimulatedVqa {
    fn answer(&mut self, q: &VqaQuery, world: &WorldState, rng: &mut dyn Randomness) -> Result<VqaAnswer, VqaError> {
        let truth = ground_truth_answer(q, world)?;
        let (text, scores) = match &q.candidates {
            Some(_) => {
                let s = answer_closed(q, &truth, &self.noise, rng)?;
                (s.argmax.clone(), Some(s))
            }
            None => (answer_open(q, &truth, &self.noise, rng)?, None),
        };
        let entry = self.tally.entry(q.category).or_default();
        entry.0 += u64::from(text == truth);
        entry.1 += 1;
        Ok(VqaAnswer { text, scores, truth })
    }
}

/// Serializable request for an external model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqaRequest {
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<String>>,
    pub facts: Observation,
}

impl From<&VqaQuery> for VqaRequest {
    fn from(q: &VqaQuery) -> Self {
        VqaRequest {
            question: q.question.clone(),
            candidates: q.candidates.clone(),
            facts: q.observation.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VqaResponse {
    Scores(BTreeMap<String, f64>),
    Text(String),
}

impl VqaResponse {
    /// The answer the caller acts on.
    pub fn answer(&self) -> Option<String> {
        match self {
            VqaResponse::Scores(s) => AnswerScores::from_scores(s.clone()).map(|a| a.argmax),
            VqaResponse::Text(t) => Some(t.clone()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;
    use serde_json::json;
    use std::collections::BTreeSet;

    fn world() -> WorldState {
        serde_json::from_value(json!({
            "locations": {"north": {"x": 0.0, "y": 10.0}, "posA": {"x": 0.0, "y": 0.0}, "table_site": {"x": 1.0, "y": 0.0}},
            "edges": [{"a": "north", "b": "posA"}, {"a": "posA", "b": "table_site"}],
            "objects": {"coke_can": {"kind": "coke can", "at": {"surface": "table"}}},
            "surfaces": {"table": {"at": "table_site", "clean": false, "clutter": ["coke_can"]}},
            "agents": {"TW": {"at": "north", "tool": "wiper"}, "ME": {"at": "north", "tool": "gripper"}}
        }))
        .unwrap()
    }

    fn query(w: &WorldState, viewer: &str, category: Category, question: &str, candidates: &[&str]) -> VqaQuery {
        let region: BTreeSet<String> = w.locations.keys().cloned().collect();
        VqaQuery {
            observation: w.observe(viewer, &region).unwrap(),
            question: question.into(),
            candidates: (!candidates.is_empty()).then(|| candidates.iter().map(|s| s.to_string()).collect()),
            category,
            target: None,
            resolver: None,
        }
    }

    #[test]
    fn perfect_oracle_scores_like_the_worked_example() {
        let w = world();
        let mut q = query(&w, "TW", Category::LocationCheck, "is the robot at posA", &["yes", "no"]);
        q.target = Some("posA".into());
        let truth = ground_truth_answer(&q, &w).unwrap();
        assert_eq!(truth, "no");
        let s = answer_closed(&q, &truth, &NoiseConfig::perfect(), &mut Stream::from_u64(0)).unwrap();
        assert_eq!(s.argmax, "no");
        assert_eq!(s.scores, BTreeMap::from([("no".into(), 0.55), ("yes".into(), 0.32)]));
    }

    #[test]
    fn singleton_candidate_set() {
        let w = world();
        let q = query(&w, "TW", Category::Generic, "anything?", &["yes"]);
        let s = answer_closed(&q, "yes", &NoiseConfig::perfect(), &mut Stream::from_u64(0)).unwrap();
        assert_eq!(s.argmax, "yes");
    }

    #[test]
    fn truth_outside_candidates_is_an_error() {
        let w = world();
        let q = query(&w, "TW", Category::Generic, "color?", &["red", "blue"]);
        let err = answer_closed(&q, "green", &NoiseConfig::perfect(), &mut Stream::from_u64(0)).unwrap_err();
        assert!(err.to_string().starts_with("uncoverable truth"));
    }

    #[test]
    fn score_gap_is_respected() {
        let w = world();
        let q = query(&w, "TW", Category::Generic, "which?", &["a", "b", "c", "d"]);
        for gap in [0.0, 0.1, 0.3, 0.5] {
            let noise = NoiseConfig { score_gap: gap, ..NoiseConfig::default() };
            let s = answer_closed(&q, "c", &noise, &mut Stream::from_u64(1)).unwrap();
            let mut v: Vec<f64> = s.scores.values().copied().collect();
            v.sort_by(|a, b| b.partial_cmp(a).unwrap());
            assert!(v[0] - v[1] >= gap - 1e-12);
            assert_eq!(s.argmax, "c");
        }
    }

    #[test]
    fn clutter_check_accuracy_over_many_queries() {
        let w = world();
        let mut q = query(&w, "TW", Category::ClutterCheck, "is the table clear for wiping?", &["yes", "no"]);
        q.target = Some("table".into());
        let noise = NoiseConfig::default().with(Category::ClutterCheck, 0.98);
        let mut rng = Stream::from_u64(11);
        let n = 10_000;
        let right = (0..n)
            .filter(|_| answer_closed(&q, "no", &noise, &mut rng).unwrap().argmax == "no")
            .count();
        let f = right as f64 / n as f64;
        assert!((f - 0.98).abs() <= 0.005, "{f}");
    }

    #[test]
    fn open_set_answers() {
        let w = world();
        let mut q = query(&w, "TW", Category::ClutterCheck, "is the table clear for wiping?", &[]);
        q.target = Some("table".into());
        let truth = ground_truth_answer(&q, &w).unwrap();
        assert_eq!(truth, "no");
        assert_eq!(answer_open(&q, &truth, &NoiseConfig::perfect(), &mut Stream::from_u64(0)).unwrap(), "no");
        assert_eq!(answer_open(&q, "anything", &NoiseConfig::perfect(), &mut Stream::from_u64(0)).unwrap(), "anything");

        let yn = query(&w, "TW", Category::Generic, "is the door open?", &[]);
        let noise = NoiseConfig::default().with(Category::Generic, 0.9);
        let mut rng = Stream::from_u64(5);
        let n = 10_000;
        let wrong = (0..n)
            .filter(|_| answer_open(&yn, "yes", &noise, &mut rng).unwrap() != "yes")
            .count();
        let f = wrong as f64 / n as f64;
        assert!((f - 0.10).abs() <= 0.01, "{f}");
    }

    #[test]
    fn distractors() {
        assert_eq!(distractor("yes", None), "no");
        assert_eq!(distractor("gripper", None), "wiper");
        assert_eq!(distractor("red", Some(&["red".into(), "blue".into()])), "blue");
        assert_eq!(distractor("red", None), "unknown");
    }

    #[test]
    fn ground_truth_by_category() {
        let mut w = world();
        let q = query(&w, "ME", Category::SelfInspection, "which tool do I have?", &["gripper", "wiper"]);
        assert_eq!(ground_truth_answer(&q, &w).unwrap(), "gripper");

        let mut q = query(&w, "ME", Category::LocationCheck, "is the robot at posA", &["yes", "no"]);
        q.target = Some("posA".into());
        assert_eq!(ground_truth_answer(&q, &w).unwrap(), "no");
        w.agent_mut("ME").unwrap().at = "posA".into();
        assert_eq!(ground_truth_answer(&q, &w).unwrap(), "yes");

        let mut g = query(&w, "ME", Category::Generic, "coke can in hand?", &["yes", "no"]);
        assert!(matches!(ground_truth_answer(&g, &w), Err(VqaError::Unanswerable(_))));
        g.resolver = Some(Resolver::ObjectAt {
            object: "coke_can".into(),
            at: Placement::Agent(SELF.into()),
        });
        assert_eq!(ground_truth_answer(&g, &w).unwrap(), "no");
    }

    #[test]
    fn argmax_ties_and_scaling() {
        let s = AnswerScores::from_scores(BTreeMap::from([("yes".into(), 0.4), ("no".into(), 0.4)])).unwrap();
        assert_eq!(s.argmax, "no");
        let base = BTreeMap::from([("a".to_string(), 0.1), ("b".to_string(), 0.55), ("c".to_string(), 0.32)]);
        for k in [0.001, 0.5, 3.0, 1e6] {
            let scaled = base.iter().map(|(a, v)| (a.clone(), v * k)).collect();
            assert_eq!(AnswerScores::from_scores(scaled).unwrap().argmax, "b");
        }
    }

    #[test]
    fn simulated_adapter_tallies_by_category() {
        let w = world();
        let mut vqa = SimulatedVqa::new(NoiseConfig::default().with(Category::SelfInspection, 0.0));
        let q = query(&w, "TW", Category::SelfInspection, "which tool do I have?", &["gripper", "wiper"]);
        let a = vqa.answer(&q, &w, &mut Stream::from_u64(0)).unwrap();
        assert_eq!(a.text, "gripper");
        assert!(!a.correct());
        assert_eq!(vqa.tally()[&Category::SelfInspection], (0, 1));
    }

    #[test]
    fn bridge_messages_round_trip() {
        let w = world();
        let q = query(&w, "TW", Category::ClutterCheck, "is the table clear for wiping?", &["yes", "no"]);
        let req = VqaRequest::from(&q);
        let text = serde_json::to_string(&req).unwrap();
        assert_eq!(serde_json::from_str::<VqaRequest>(&text).unwrap(), req);
        let resp: VqaResponse = serde_json::from_str(r#"{"scores":{"no":0.55,"yes":0.32}}"#).unwrap();
        assert_eq!(resp.answer().as_deref(), Some("no"));
        let resp: VqaResponse = serde_json::from_str(r#"{"text":"yes"}"#).unwrap();
        assert_eq!(resp.answer().as_deref(), Some("yes"));
    }
}
