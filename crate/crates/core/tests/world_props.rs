//! Invariants of world state under arbitrary effect sequences.

use std::collections::BTreeSet;
use std::path::PathBuf;

use proptest::prelude::*;
use vader_core::sim::Scenario;
use vader_core::world::{Effect, Placement, WorldState};

fn world() -> WorldState {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/scenario-b.json");
    Scenario::load(p).expect("scenario").world
}

const LOCATIONS: [&str; 7] = ["north", "hallway", "table_site", "trash", "snack_area", "posA", "nowhere"];
const AGENTS: [&str; 3] = ["TW", "ME", "ghost"];

fn placement() -> impl Strategy<Value = Placement> {
    prop_oneof![
        prop::sample::select(&LOCATIONS[..]).prop_map(|l| Placement::Location(l.into())),
        prop::sample::select(&AGENTS[..]).prop_map(|a| Placement::Agent(a.into())),
        prop::sample::select(&["table", "shelf"][..]).prop_map(|s| Placement::Surface(s.into())),
    ]
}

fn effect() -> impl Strategy<Value = Effect> {
    prop_oneof![
        (prop::sample::select(&AGENTS[..]), prop::sample::select(&LOCATIONS[..]))
            .prop_map(|(a, l)| Effect::MoveAgent { agent: a.into(), to: l.into() }),
        (prop::sample::select(&["coke_can", "mug"][..]), placement())
            .prop_map(|(o, to)| Effect::MoveObject { object: o.into(), to }),
        any::<bool>().prop_map(|c| Effect::SetClean {
            surface: "table".into(),
            clean: c
        }),
        (prop::sample::select(&LOCATIONS[..]), prop::sample::select(&LOCATIONS[..]), any::<bool>())
            .prop_map(|(a, b, blocked)| Effect::SetEdgeBlocked { a: a.into(), b: b.into(), blocked }),
        (0.0f64..500.0).prop_map(|s| Effect::AdvanceClock { seconds: s }),
    ]
}

fn check(w: &WorldState, objects: &BTreeSet<String>) {
    assert!(w.validate().is_ok(), "{:?}", w.validate());
    let now: BTreeSet<String> = w.objects.keys().cloned().collect();
    assert_eq!(&now, objects, "objects appeared or vanished");
    for (id, o) in &w.objects {
        let listed: Vec<&String> = w.surfaces.iter().filter(|(_, s)| s.clutter.contains(id)).map(|(k, _)| k).collect();
        match &o.at {
            Placement::Surface(s) => assert_eq!(listed, vec![s], "{id} on {s} but listed on {listed:?}"),
            _ => assert!(listed.is_empty(), "{id} off surfaces but listed on {listed:?}"),
        }
    }
    for (a, b, blocked) in w.edges() {
        assert_eq!(w.edge_blocked(b, a), Some(blocked));
    }
}

proptest! {
    #[test]
    fn effects_preserve_invariants(effects in prop::collection::vec(effect(), 0..40)) {
        let mut w = world();
        let objects: BTreeSet<String> = w.objects.keys().cloned().collect();
        check(&w, &objects);
        for e in &effects {
            let before = w.clone();
            let clock = w.clock();
            match w.apply(e) {
                Ok(()) => {
                    prop_assert!(w.clock() >= clock);
                    prop_assert_eq!(&before.apply_effect(e).unwrap(), &w);
                }
                // rejected effects leave no trace
                Err(_) => prop_assert_eq!(&before, &w),
            }
            check(&w, &objects);
        }
    }

    #[test]
    fn serialization_round_trips(effects in prop::collection::vec(effect(), 0..20)) {
        let mut w = world();
        for e in &effects {
            let _ = w.apply(e);
        }
        let back: WorldState = serde_json::from_str(&serde_json::to_string(&w).unwrap()).unwrap();
        prop_assert_eq!(back, w);
    }

    #[test]
    fn nearest_human_is_closest(x in -20.0f64..20.0, y in -20.0f64..20.0) {
        let mut w = world();
        w.locations.insert("spot".into(), vader_core::world::Point { x, y });
        w.humans.insert("zed".into(), vader_core::world::Human { at: "north".into(), available: true });
        w.agents.get_mut("TW").unwrap().at = "spot".into();
        let chosen = w.nearest_human("TW").unwrap().unwrap();
        let here = w.locations["spot"];
        let d = |h: &str| here.dist(w.locations[&w.humans[h].at]);
        for h in w.humans.keys() {
            prop_assert!(d(&chosen) <= d(h));
        }
    }
}
