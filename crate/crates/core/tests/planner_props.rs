//! Planner behaviour over arbitrary assessment outcomes.

use std::path::PathBuf;

use proptest::prelude::*;
use vader_core::planner::{build_context, Action, ContextEntry, Planner, Rung};
use vader_core::sim::Scenario;
use vader_core::world::Tool;

fn planner() -> Planner {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/scenario-a.json");
    Scenario::load(p).expect("scenario").build_planner().expect("planner")
}

/// Drive the planner with answers drawn from `answers`, cycling. Returns
/// the actions taken and the final one.
fn drive(p: &Planner, instruction: &str, tool: Tool, answers: &[usize], cap: usize) -> (Vec<Action>, Action) {
    let mut history: Vec<ContextEntry> = Vec::new();
    let mut tool = tool;
    let mut taken = Vec::new();
    for k in 0..cap {
        let a = p.plan(instruction, &history, tool).unwrap();
        match &a {
            Action::Done | Action::GiveUp | Action::ReturnTask => return (taken, a),
            _ => {}
        }
        let name = a.name();
        let entry = p.describe_outcome(&name).unwrap();
        let answer = entry.candidates[answers[k % answers.len()] % entry.candidates.len()].clone();
        if name == "inspect self" {
            tool = Tool::parse(&answer);
        }
        history.push(build_context(&name, &entry, &answer));
        taken.push(a);
    }
    panic!("no terminal action within {cap} steps: {taken:?}");
}

proptest! {
    #[test]
    fn plans_terminate_within_the_bound(
        answers in prop::collection::vec(0usize..4, 1..64),
        instruction in prop::sample::select(vec!["wipe the table", "clear the table", "put the coke can in the trash"]),
        known in any::<bool>(),
    ) {
        let p = planner();
        let bound = p.max_steps(instruction).unwrap();
        let tool = if known { Tool::Wiper } else { Tool::Unknown };
        let (taken, _) = drive(&p, instruction, tool, &answers, bound + 1);
        prop_assert!(taken.len() < bound, "{} steps, bound {bound}", taken.len());
    }

    #[test]
    fn help_rungs_come_in_order(answers in prop::collection::vec(0usize..4, 1..64)) {
        let p = planner();
        let (taken, _) = drive(&p, "wipe the table", Tool::Wiper, &answers, 100);
        // per help instruction: any robot request precedes every human one
        for instr in ["clear the table", "move the chairs"] {
            let rungs: Vec<Rung> = taken
                .iter()
                .filter_map(|a| match a {
                    Action::AskHelp { help, rung } if help.instruction == instr => Some(*rung),
                    _ => None,
                })
                .collect();
            let first_human = rungs.iter().position(|r| *r == Rung::Human).unwrap_or(rungs.len());
            prop_assert!(rungs[first_human..].iter().all(|r| *r == Rung::Human), "{instr}: {rungs:?}");
        }
    }

    #[test]
    fn scores_single_out_the_plan(answers in prop::collection::vec(0usize..4, 0..12)) {
        let p = planner();
        let mut history = Vec::new();
        for (i, a) in answers.iter().enumerate() {
            let action = p.plan("wipe the table", &history, Tool::Wiper).unwrap();
            if matches!(action, Action::Done | Action::GiveUp | Action::ReturnTask) || i > 10 {
                break;
            }
            let entry = p.describe_outcome(&action.name()).unwrap();
            history.push(build_context(&action.name(), &entry, &entry.candidates[a % entry.candidates.len()]));
        }
        let s = p.next_skill("wipe the table", &history, Tool::Wiper).unwrap();
        let top = s.scores[&s.argmax];
        prop_assert_eq!(s.scores.values().filter(|v| **v >= top).count(), 1);
        prop_assert_eq!(s.argmax, p.plan("wipe the table", &history, Tool::Wiper).unwrap().name());
    }
}

#[test]
fn retries_precede_help() {
    let p = planner();
    // every navigation attempt fails
    let mut history = Vec::new();
    let mut seen = Vec::new();
    for _ in 0..10 {
        let a = p.plan("wipe the table", &history, Tool::Wiper).unwrap();
        seen.push(a.name());
        if matches!(a, Action::GiveUp) {
            break;
        }
        let entry = p.describe_outcome(&a.name()).unwrap();
        history.push(build_context(&a.name(), &entry, "no"));
    }
    assert_eq!(
        seen,
        [
            "navigate to table",
            "navigate to table",
            "ask a human for help: move the chairs",
            "give up"
        ]
    );
}

#[test]
fn required_example_and_outcome_lookup() {
    let p = planner();
    assert_eq!(p.next_skill("wipe the table", &[], Tool::Wiper).unwrap().argmax, "navigate to table");
    assert_eq!(p.describe_outcome("pick up coke can").unwrap().expected, "coke can in hand");
    let request = p.request("wipe the table", &[], Tool::Wiper);
    let json = serde_json::to_value(&request).unwrap();
    assert_eq!(json["instruction"], "wipe the table");
    assert_eq!(json["tool"], "wiper");
}
