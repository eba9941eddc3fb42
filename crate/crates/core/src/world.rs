//! Ground-truth environment: places, the navigation graph, objects,
//! surfaces, agents and humans, plus effect application and region-scoped
//! observation.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Stand-in for "the agent running this skill" inside effect and
/// precondition templates.
pub const SELF: &str = "@self";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WorldError {
    #[error("unknown agent: {0}")]
    UnknownAgent(String),
    #[error("unknown location: {0}")]
    UnknownLocation(String),
    #[error("invalid effect: {0}")]
    InvalidEffect(String),
    #[error("invalid world: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tool {
    Gripper,
    Wiper,
    Unknown,
}

impl Tool {
    pub fn as_str(self) -> &'static str {
        match self {
            Tool::Gripper => "gripper",
            Tool::Wiper => "wiper",
            Tool::Unknown => "unknown",
        }
    }

    pub fn parse(s: &str) -> Tool {
        match s {
            "gripper" => Tool::Gripper,
            "wiper" => Tool::Wiper,
            _ => Tool::Unknown,
        }
    }
}

impl fmt::Display for Tool {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn dist(self, o: Point) -> f64 {
        (self.x - o.x).hypot(self.y - o.y)
    }
}

/// Where an object is: at a location, carried by an agent, or on a surface.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    Location(String),
    Agent(String),
    Surface(String),
}

impl Placement {
    fn bind(&self, agent: &str) -> Placement {
        match self {
            Placement::Agent(a) if a == SELF => Placement::Agent(agent.to_string()),
            other => other.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Object {
    pub kind: String,
    pub at: Placement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Surface {
    pub at: String,
    pub clean: bool,
    #[serde(default)]
    pub clutter: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub at: String,
    pub tool: Tool,
    #[serde(default)]
    pub busy: bool,
    #[serde(default)]
    pub hardware_failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Human {
    pub at: String,
    #[serde(default = "yes")]
    pub available: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeSpec {
    pub a: String,
    pub b: String,
    #[serde(default)]
    pub blocked: bool,
}

/// Unordered pair of location names.
fn edge_key(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Effect {
    MoveAgent { agent: String, to: String },
    MoveObject { object: String, to: Placement },
    SetClean { surface: String, clean: bool },
    SetEdgeBlocked { a: String, b: String, blocked: bool },
    SetBusy { agent: String, busy: bool },
    AdvanceClock { seconds: f64 },
}

impl Effect {
    /// Replace [`SELF`] with `agent`.
    pub fn bind(&self, agent: &str) -> Effect {
        let who = |a: &String| if a == SELF { agent.to_string() } else { a.clone() };
        match self {
            Effect::MoveAgent { agent: a, to } => Effect::MoveAgent { agent: who(a), to: to.clone() },
            Effect::MoveObject { object, to } => Effect::MoveObject {
                object: object.clone(),
                to: to.bind(agent),
            },
            Effect::SetBusy { agent: a, busy } => Effect::SetBusy { agent: who(a), busy: *busy },
            other => other.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct WorldSpec {
    locations: BTreeMap<String, Point>,
    #[serde(default)]
    edges: Vec<EdgeSpec>,
    #[serde(default)]
    objects: BTreeMap<String, Object>,
    #[serde(default)]
    surfaces: BTreeMap<String, Surface>,
    #[serde(default)]
    agents: BTreeMap<String, AgentState>,
    #[serde(default)]
    humans: BTreeMap<String, Human>,
    #[serde(default)]
    clock: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WorldSpec", into = "WorldSpec")]
pub struct WorldState {
    pub locations: BTreeMap<String, Point>,
    edges: BTreeMap<(String, String), bool>,
    pub objects: BTreeMap<String, Object>,
    pub surfaces: BTreeMap<String, Surface>,
    pub agents: BTreeMap<String, AgentState>,
    pub humans: BTreeMap<String, Human>,
    clock: f64,
}

impl TryFrom<WorldSpec> for WorldState {
    type Error = WorldError;

    fn try_from(spec: WorldSpec) -> Result<Self, WorldError> {
        let mut edges = BTreeMap::new();
        for e in &spec.edges {
            let key = edge_key(&e.a, &e.b);
            if let Some(prev) = edges.insert(key, e.blocked) {
                if prev != e.blocked {
                    return Err(WorldError::Invalid(format!("edge {}-{} listed twice", e.a, e.b)));
                }
            }
        }
        let w = WorldState {
            locations: spec.locations,
            edges,
            objects: spec.objects,
            surfaces: spec.surfaces,
            agents: spec.agents,
            humans: spec.humans,
            clock: spec.clock,
        };
        w.validate()?;
        Ok(w)
    }
}

impl From<WorldState> for WorldSpec {
    fn from(w: WorldState) -> Self {
        WorldSpec {
            edges: w
                .edges
                .iter()
                .map(|((a, b), blocked)| EdgeSpec {
                    a: a.clone(),
                    b: b.clone(),
                    blocked: *blocked,
                })
                .collect(),
            locations: w.locations,
            objects: w.objects,
            surfaces: w.surfaces,
            agents: w.agents,
            humans: w.humans,
            clock: w.clock,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectView {
    pub id: String,
    pub kind: String,
    pub location: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceView {
    pub id: String,
    pub at: String,
    pub clean: bool,
    pub clutter: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanView {
    pub id: String,
    pub at: String,
    pub available: bool,
}

/// What an agent perceives of a set of locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub viewer: String,
    pub at_location: String,
    pub visible_objects: Vec<ObjectView>,
    pub visible_surfaces: Vec<SurfaceView>,
    pub visible_humans: Vec<HumanView>,
    pub self_tool_visible: Option<Tool>,
}

impl WorldState {
    pub fn clock(&self) -> f64 {
        self.clock
    }

    /// Move the clock forward to `t`; never backwards.
    pub fn advance_clock_to(&mut self, t: f64) {
        if t > self.clock {
            self.clock = t;
        }
    }

    pub fn edges(&self) -> impl Iterator<Item = (&str, &str, bool)> {
        self.edges.iter().map(|((a, b), bl)| (a.as_str(), b.as_str(), *bl))
    }

    pub fn edge_blocked(&self, a: &str, b: &str) -> Option<bool> {
        self.edges.get(&edge_key(a, b)).copied()
    }

    pub fn agent(&self, id: &str) -> Result<&AgentState, WorldError> {
        self.agents.get(id).ok_or_else(|| WorldError::UnknownAgent(id.to_string()))
    }

    pub fn agent_mut(&mut self, id: &str) -> Result<&mut AgentState, WorldError> {
        self.agents.get_mut(id).ok_or_else(|| WorldError::UnknownAgent(id.to_string()))
    }

    /// Location an object currently occupies, following agents and surfaces.
    pub fn object_location(&self, id: &str) -> Option<&str> {
        match &self.objects.get(id)?.at {
            Placement::Location(l) => Some(l.as_str()),
            Placement::Agent(a) => self.agents.get(a).map(|a| a.at.as_str()),
            Placement::Surface(s) => self.surfaces.get(s).map(|s| s.at.as_str()),
        }
    }

    fn placement_exists(&self, p: &Placement) -> bool {
        match p {
            Placement::Location(l) => self.locations.contains_key(l),
            Placement::Agent(a) => self.agents.contains_key(a),
            Placement::Surface(s) => self.surfaces.contains_key(s),
        }
    }

    /// Check every structural invariant.
    pub fn validate(&self) -> Result<(), WorldError> {
        let bad = |m: String| Err(WorldError::Invalid(m));
        for (a, b) in self.edges.keys() {
            if !self.locations.contains_key(a) || !self.locations.contains_key(b) {
                return bad(format!("edge {a}-{b} references an unknown location"));
            }
        }
        for (id, o) in &self.objects {
            if !self.placement_exists(&o.at) {
                return bad(format!("object {id} placed at missing {:?}", o.at));
            }
        }
        let mut cluttered = BTreeSet::new();
        for (sid, s) in &self.surfaces {
            if !self.locations.contains_key(&s.at) {
                return bad(format!("surface {sid} at unknown location {}", s.at));
            }
            for o in &s.clutter {
                if !cluttered.insert(o.clone()) {
                    return bad(format!("object {o} listed on two surfaces"));
                }
                match self.objects.get(o) {
                    Some(obj) if obj.at == Placement::Surface(sid.clone()) => {}
                    _ => return bad(format!("clutter {o} on {sid} is not placed there")),
                }
            }
        }
        for (id, o) in &self.objects {
            if let Placement::Surface(s) = &o.at {
                if !self.surfaces[s].clutter.contains(id) {
                    return bad(format!("object {id} on {s} missing from its clutter"));
                }
            }
        }
        for (id, a) in &self.agents {
            if !self.locations.contains_key(&a.at) {
                return bad(format!("agent {id} at unknown location {}", a.at));
            }
        }
        for (id, h) in &self.humans {
            if !self.locations.contains_key(&h.at) {
                return bad(format!("human {id} at unknown location {}", h.at));
            }
        }
        if !(self.clock.is_finite() && self.clock >= 0.0) {
            return bad(format!("clock {}", self.clock));
        }
        Ok(())
    }

    fn check_effect(&self, e: &Effect) -> Result<(), WorldError> {
        let invalid = |m: String| Err(WorldError::InvalidEffect(m));
        match e {
            Effect::MoveAgent { agent, to } => {
                if !self.agents.contains_key(agent) {
                    return invalid(format!("no agent {agent}"));
                }
                if !self.locations.contains_key(to) {
                    return invalid(format!("no location {to}"));
                }
            }
            Effect::MoveObject { object, to } => {
                if !self.objects.contains_key(object) {
                    return invalid(format!("no object {object}"));
                }
                if !self.placement_exists(to) {
                    return invalid(format!("no destination {to:?}"));
                }
            }
            Effect::SetClean { surface, .. } => {
                if !self.surfaces.contains_key(surface) {
                    return invalid(format!("no surface {surface}"));
                }
            }
            Effect::SetEdgeBlocked { a, b, .. } => {
                if !self.edges.contains_key(&edge_key(a, b)) {
                    return invalid(format!("no edge {a}-{b}"));
                }
            }
            Effect::SetBusy { agent, .. } => {
                if !self.agents.contains_key(agent) {
                    return invalid(format!("no agent {agent}"));
                }
            }
            Effect::AdvanceClock { seconds } => {
                if !(seconds.is_finite() && *seconds >= 0.0) {
                    return invalid(format!("clock step {seconds}"));
                }
            }
        }
        Ok(())
    }

    /// Apply `e` in place. Nothing changes when the effect is invalid.
    pub fn apply(&mut self, e: &Effect) -> Result<(), WorldError> {
        self.check_effect(e)?;
        match e {
            Effect::MoveAgent { agent, to } => self.agents.get_mut(agent).expect("checked").at = to.clone(),
            Effect::MoveObject { object, to } => {
                for s in self.surfaces.values_mut() {
                    s.clutter.retain(|o| o != object);
                }
                if let Placement::Surface(s) = to {
                    self.surfaces.get_mut(s).expect("checked").clutter.push(object.clone());
                }
                self.objects.get_mut(object).expect("checked").at = to.clone();
            }
            Effect::SetClean { surface, clean } => self.surfaces.get_mut(surface).expect("checked").clean = *clean,
            Effect::SetEdgeBlocked { a, b, blocked } => {
                self.edges.insert(edge_key(a, b), *blocked);
            }
            Effect::SetBusy { agent, busy } => self.agents.get_mut(agent).expect("checked").busy = *busy,
            Effect::AdvanceClock { seconds } => self.clock += seconds,
        }
        Ok(())
    }

    /// Pure form of [`apply`](Self::apply).
    pub fn apply_effect(&self, e: &Effect) -> Result<WorldState, WorldError> {
        let mut next = self.clone();
        next.apply(e)?;
        Ok(next)
    }

    /// Everything inside `region` as seen by `viewer`.
    pub fn observe(&self, viewer: &str, region: &BTreeSet<String>) -> Result<Observation, WorldError> {
        let me = self.agent(viewer)?;
        let visible_objects = self
            .objects
            .iter()
            .filter_map(|(id, o)| {
                let loc = self.object_location(id)?;
                region.contains(loc).then(|| ObjectView {
                    id: id.clone(),
                    kind: o.kind.clone(),
                    location: loc.to_string(),
                })
            })
            .collect();
        let visible_surfaces = self
            .surfaces
            .iter()
            .filter(|(_, s)| region.contains(&s.at))
            .map(|(id, s)| SurfaceView {
                id: id.clone(),
                at: s.at.clone(),
                clean: s.clean,
                clutter: s.clutter.clone(),
            })
            .collect();
        let visible_humans = self
            .humans
            .iter()
            .filter(|(_, h)| region.contains(&h.at))
            .map(|(id, h)| HumanView {
                id: id.clone(),
                at: h.at.clone(),
                available: h.available,
            })
            .collect();
        Ok(Observation {
            viewer: viewer.to_string(),
            at_location: me.at.clone(),
            visible_objects,
            visible_surfaces,
            visible_humans,
            self_tool_visible: region.contains(&me.at).then_some(me.tool),
        })
    }

    /// The available human closest to `from`; ties go to the smaller id.
    pub fn nearest_human(&self, from: &str) -> Result<Option<String>, WorldError> {
        let here = self.locations[&self.agent(from)?.at];
        let mut best: Option<(f64, &String)> = None;
        for (id, h) in self.humans.iter().filter(|(_, h)| h.available) {
            let d = here.dist(self.locations[&h.at]);
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, id));
            }
        }
        Ok(best.map(|(_, id)| id.clone()))
    }

    /// Whether unblocked edges connect `from` and `to`.
    pub fn path_exists(&self, from: &str, to: &str) -> Result<bool, WorldError> {
        for l in [from, to] {
            if !self.locations.contains_key(l) {
                return Err(WorldError::UnknownLocation(l.to_string()));
            }
        }
        let mut seen = BTreeSet::from([from]);
        let mut queue = VecDeque::from([from]);
        while let Some(cur) = queue.pop_front() {
            if cur == to {
                return Ok(true);
            }
            for ((a, b), blocked) in &self.edges {
                if *blocked {
                    continue;
                }
                let next = if a == cur {
                    b.as_str()
                } else if b == cur {
                    a.as_str()
                } else {
                    continue;
                };
                if seen.insert(next) {
                    queue.push_back(next);
                }
            }
        }
        Ok(false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    pub(crate) fn scene() -> WorldState {
        serde_json::from_value(json!({
            "locations": {
                "north": {"x": 0.0, "y": 10.0},
                "hallway": {"x": 0.0, "y": 5.0},
                "table_site": {"x": 0.0, "y": 0.0},
                "trash": {"x": 4.0, "y": 0.0},
                "snack_area": {"x": -4.0, "y": 5.0}
            },
            "edges": [
                {"a": "north", "b": "hallway"},
                {"a": "hallway", "b": "table_site"},
                {"a": "table_site", "b": "trash"},
                {"a": "hallway", "b": "snack_area"}
            ],
            "objects": {"coke_can": {"kind": "coke can", "at": {"surface": "table"}}},
            "surfaces": {"table": {"at": "table_site", "clean": false, "clutter": ["coke_can"]}},
            "agents": {
                "TW": {"at": "north", "tool": "wiper"},
                "ME": {"at": "north", "tool": "gripper"}
            },
            "humans": {}
        }))
        .unwrap()
    }

    fn region(names: &[&str]) -> BTreeSet<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn observing_the_cluttered_table() {
        let w = scene();
        let o = w.observe("TW", &region(&["table_site"])).unwrap();
        assert_eq!(o.visible_objects.len(), 1);
        assert_eq!(o.visible_objects[0].kind, "coke can");
        assert!(!o.visible_surfaces[0].clean);
        assert_eq!(o.visible_surfaces[0].clutter, vec!["coke_can"]);
        // TW is in the north, so it does not see itself
        assert_eq!(o.self_tool_visible, None);
    }

    #[test]
    fn empty_region_sees_nothing() {
        let o = scene().observe("TW", &BTreeSet::new()).unwrap();
        assert!(o.visible_objects.is_empty() && o.visible_surfaces.is_empty() && o.visible_humans.is_empty());
        assert_eq!(o.self_tool_visible, None);
    }

    #[test]
    fn own_location_reveals_own_tool() {
        let o = scene().observe("ME", &region(&["north"])).unwrap();
        assert_eq!(o.self_tool_visible, Some(Tool::Gripper));
        assert_eq!(o.at_location, "north");
    }

    #[test]
    fn unknown_viewer_is_an_error() {
        let err = scene().observe("R2", &BTreeSet::new()).unwrap_err();
        assert_eq!(err, WorldError::UnknownAgent("R2".into()));
        assert!(err.to_string().starts_with("unknown agent"));
    }

    #[test]
    fn removing_the_can_empties_the_clutter() {
        let w = scene()
            .apply_effect(&Effect::MoveObject {
                object: "coke_can".into(),
                to: Placement::Agent("ME".into()),
            })
            .unwrap();
        let o = w.observe("TW", &region(&["table_site"])).unwrap();
        assert!(o.visible_surfaces[0].clutter.is_empty());
        let w = w
            .apply_effect(&Effect::MoveObject {
                object: "coke_can".into(),
                to: Placement::Location("trash".into()),
            })
            .unwrap();
        assert_eq!(w.object_location("coke_can"), Some("trash"));
        assert!(w.surfaces["table"].clutter.is_empty());
        w.validate().unwrap();
    }

    #[test]
    fn edge_blocking_is_symmetric() {
        let w = scene();
        let w = w
            .apply_effect(&Effect::SetEdgeBlocked {
                a: "table_site".into(),
                b: "hallway".into(),
                blocked: true,
            })
            .unwrap();
        assert_eq!(w.edge_blocked("hallway", "table_site"), Some(true));
        assert_eq!(w.edge_blocked("table_site", "hallway"), Some(true));
        assert!(!w.path_exists("north", "table_site").unwrap());
        assert!(!w.path_exists("table_site", "north").unwrap());
        let w = w
            .apply_effect(&Effect::SetEdgeBlocked {
                a: "hallway".into(),
                b: "table_site".into(),
                blocked: false,
            })
            .unwrap();
        assert!(w.path_exists("north", "table_site").unwrap());
        assert!(w.path_exists("table_site", "north").unwrap());
    }

    #[test]
    fn golden_effect_sequence_cleans_the_table() {
        let mut w = scene();
        let seq = [
            Effect::MoveAgent { agent: "TW".into(), to: "table_site".into() },
            Effect::MoveAgent { agent: "ME".into(), to: "table_site".into() },
            Effect::MoveObject { object: "coke_can".into(), to: Placement::Agent(SELF.into()) }.bind("ME"),
            Effect::SetClean { surface: "table".into(), clean: true },
            Effect::MoveAgent { agent: "ME".into(), to: "trash".into() },
            Effect::MoveObject { object: "coke_can".into(), to: Placement::Location("trash".into()) },
        ];
        for e in &seq {
            w.apply(e).unwrap();
        }
        assert!(w.surfaces["table"].clean);
        assert!(w.surfaces["table"].clutter.is_empty());
        assert_eq!(w.objects.len(), 1);
    }

    #[test]
    fn invalid_effects_leave_state_untouched() {
        let w = scene();
        let cases = [
            Effect::SetClean { surface: "desk".into(), clean: true },
            Effect::MoveObject { object: "ghost".into(), to: Placement::Location("trash".into()) },
            Effect::MoveObject { object: "coke_can".into(), to: Placement::Agent("R2".into()) },
            Effect::MoveAgent { agent: "R2".into(), to: "north".into() },
            Effect::SetEdgeBlocked { a: "north".into(), b: "trash".into(), blocked: true },
            Effect::AdvanceClock { seconds: -1.0 },
        ];
        for e in cases {
            let mut copy = w.clone();
            let err = copy.apply(&e).unwrap_err();
            assert!(err.to_string().starts_with("invalid effect"), "{err}");
            assert_eq!(copy, w);
        }
    }

    #[test]
    fn clock_advances_by_effect_duration() {
        let w = scene().apply_effect(&Effect::AdvanceClock { seconds: 20.0 }).unwrap();
        assert_eq!(w.clock(), 20.0);
        let mut w2 = w.clone();
        w2.advance_clock_to(5.0);
        assert_eq!(w2.clock(), 20.0);
    }

    #[test]
    fn nearest_human_rules() {
        let mut w = scene();
        assert_eq!(w.nearest_human("TW").unwrap(), None);
        w.locations.insert("near".into(), Point { x: 2.0, y: 10.0 });
        w.locations.insert("far".into(), Point { x: 5.0, y: 10.0 });
        w.locations.insert("west".into(), Point { x: -2.0, y: 10.0 });
        w.humans.insert("zoe".into(), Human { at: "far".into(), available: true });
        w.humans.insert("yan".into(), Human { at: "near".into(), available: true });
        assert_eq!(w.nearest_human("TW").unwrap().as_deref(), Some("yan"));
        // equidistant on the other side: lexicographically smaller id wins
        w.humans.insert("xia".into(), Human { at: "west".into(), available: true });
        assert_eq!(w.nearest_human("TW").unwrap().as_deref(), Some("xia"));
        w.humans.get_mut("xia").unwrap().available = false;
        assert_eq!(w.nearest_human("TW").unwrap().as_deref(), Some("yan"));
    }

    #[test]
    fn trivial_and_unknown_paths() {
        let w = scene();
        assert!(w.path_exists("trash", "trash").unwrap());
        assert_eq!(
            w.path_exists("north", "mars").unwrap_err(),
            WorldError::UnknownLocation("mars".into())
        );
    }

    #[test]
    fn loading_rejects_dangling_references() {
        let mut spec: serde_json::Value = serde_json::to_value(scene()).unwrap();
        spec["objects"]["coke_can"]["at"] = json!({"surface": "desk"});
        assert!(serde_json::from_value::<WorldState>(spec).is_err());
        let mut spec: serde_json::Value = serde_json::to_value(scene()).unwrap();
        spec["agents"]["TW"]["at"] = json!("mars");
        assert!(serde_json::from_value::<WorldState>(spec).is_err());
    }

    #[test]
    fn serialization_round_trips() {
        let w = scene();
        let back: WorldState = serde_json::from_str(&serde_json::to_string(&w).unwrap()).unwrap();
        assert_eq!(back, w);
    }
}
