//! End-to-end episodes: recovery paths, failure classes, outages, replay
//! and live mode.

use std::io::BufReader;
use std::path::PathBuf;
use std::time::Duration;

use vader_core::rng::Seeded;
use vader_core::runtime::{EventKind, LoopEvent};
use vader_core::sim::live::{run_live, LiveConfig};
use vader_core::sim::trace::{read_jsonl, to_jsonl, Record};
use vader_core::sim::{report, run_trial, run_trials, Outage, Scenario, TrialOutcome};
use vader_core::vqa::Category;
use vader_hrfs::{AgentKind, Client, Preference, Profile, TaskFilter, TaskStatus, UpdateRequest};

fn scenario(name: &str) -> Scenario {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.json"));
    Scenario::load(p).expect("scenario")
}

fn run(s: &Scenario) -> (Vec<Record>, TrialOutcome) {
    run_trial(s, &mut Seeded { master: 0, trial: 0 }, 0, 0).expect("trial")
}

fn events(trace: &[Record], kind: EventKind) -> Vec<&LoopEvent> {
    trace
        .iter()
        .filter_map(|r| match r {
            Record::Loop(e) if e.kind == kind => Some(e),
            _ => None,
        })
        .collect()
}

fn root_status(trace: &[Record]) -> Option<TaskStatus> {
    trace.iter().rev().find_map(|r| match r {
        Record::Hrfs { task, .. } if task.poster == "operator" => Some(task.status),
        _ => None,
    })
}

#[test]
fn blocked_hallway_is_cleared_by_a_person() {
    let (trace, o) = run(&scenario("scenario-b"));
    assert!(o.completed && o.terminated);
    let posts = events(&trace, EventKind::HelpPosted);
    assert_eq!(posts[0].agent, "TW");
    assert_eq!(posts[0].payload["instruction"], "move the chairs");
    assert_eq!(posts[0].payload["preference"], "human");
    assert_eq!(posts[0].payload["target"], "alice");
    // the navigation alerted twice before asking
    let navs: Vec<&LoopEvent> = events(&trace, EventKind::Executed)
        .into_iter()
        .filter(|e| e.agent == "TW" && e.payload["skill"] == "navigate to table")
        .collect();
    assert_eq!(navs[0].payload["outcome"], "precondition_alert");
    assert_eq!(navs[1].payload["outcome"], "precondition_alert");
    assert_eq!(navs[2].payload["outcome"], "nominal");
    let by_alice = trace.iter().any(|r| {
        matches!(r, Record::Hrfs { task, .. }
            if task.instruction == "move the chairs" && task.status == TaskStatus::Done && task.claimant.as_deref() == Some("alice"))
    });
    assert!(by_alice);
}

#[test]
fn broken_waiter_leaves_its_task_unclaimed() {
    let mut s = scenario("scenario-a");
    s.faults.hardware_overrides.insert("TW".into(), 1.0);
    let (trace, o) = run(&s);
    assert!(o.terminated && !o.completed);
    assert_eq!(o.failure.as_deref(), Some("hardware"));
    // liveness returned the root; nobody else may take a task aimed at TW
    assert_eq!(root_status(&trace), Some(TaskStatus::Posted));
    let returned = trace.iter().find_map(|r| match r {
        Record::Hrfs { t, task, .. } if task.status == TaskStatus::Returned => Some(*t),
        _ => None,
    });
    assert_eq!(returned, Some(20.0 + s.liveness));
}

#[test]
fn broken_helper_runs_out_the_ladder() {
    let mut s = scenario("scenario-a");
    s.faults.hardware_overrides.insert("ME".into(), 1.0);
    let (trace, o) = run(&s);
    assert!(o.terminated && !o.completed);
    assert_eq!(o.failure.as_deref(), Some("hardware"));
    let resolved = events(&trace, EventKind::HelpResolved);
    assert_eq!(resolved.len(), 2);
    assert!(resolved.iter().all(|e| e.payload["timed_out"] == true));
    let posts = events(&trace, EventKind::HelpPosted);
    // no people in this world: the last rung opens the request to anyone
    assert_eq!(posts[1].payload["preference"], "any");
    assert_eq!(root_status(&trace), Some(TaskStatus::Failed));
}

#[test]
fn wrong_clutter_answer_is_not_recoverable() {
    let mut s = scenario("scenario-a");
    s.noise = s.noise.clone().with(Category::ClutterCheck, 0.0);
    let (trace, o) = run(&s);
    assert!(!o.completed);
    assert_eq!(o.failure.as_deref(), Some("vqa:clutter_check"));
    assert!(events(&trace, EventKind::HelpPosted).is_empty());
    let wipes: Vec<&LoopEvent> = events(&trace, EventKind::Executed)
        .into_iter()
        .filter(|e| e.payload["skill"] == "perform table wiping")
        .collect();
    assert_eq!(wipes.len(), 2);
    assert!(wipes.iter().all(|e| e.payload["outcome"] == "infeasible"));
}

#[test]
fn wrong_self_inspection_returns_the_task() {
    let mut s = scenario("scenario-a");
    s.noise = s.noise.clone().with(Category::SelfInspection, 0.0);
    let (trace, o) = run(&s);
    assert!(o.terminated && !o.completed);
    assert_eq!(o.failure.as_deref(), Some("vqa:self_inspection"));
    assert_eq!(events(&trace, EventKind::TaskReturned).len(), 1);
    assert_eq!(root_status(&trace), Some(TaskStatus::Posted));
}

#[test]
fn offline_poster_backs_off_then_gives_up() {
    let mut s = scenario("scenario-a");
    s.outages.push(Outage {
        agent: "TW".into(),
        at: 170.0,
        duration: 100.0,
    });
    let (trace, o) = run(&s);
    assert!(!o.completed);
    let failed = events(&trace, EventKind::TaskFailed);
    assert_eq!(failed[0].t, 180.0 + 5.0 + 10.0 + 20.0);
    assert_eq!(failed[0].payload["reason"], "task board unreachable");
    // the failure reached the board once the robot was back
    let at = trace.iter().find_map(|r| match r {
        Record::Hrfs { t, task, .. } if task.poster == "operator" && task.status == TaskStatus::Failed => Some(*t),
        _ => None,
    });
    assert_eq!(at, Some(270.0));
}

#[test]
fn outage_past_liveness_loses_the_claim_then_reclaims() {
    let mut s = scenario("scenario-a");
    s.outages.push(Outage {
        agent: "TW".into(),
        at: 10.0,
        duration: 400.0,
    });
    let (trace, o) = run(&s);
    assert!(o.completed, "{o:?}");
    let claims: Vec<&LoopEvent> = events(&trace, EventKind::Claimed).into_iter().filter(|e| e.agent == "TW").collect();
    assert_eq!(claims.len(), 2);
    assert_eq!(claims[1].t, 410.0);
}

#[test]
fn replay_reproduces_the_report() {
    let s = scenario("pilot");
    let (trace, outcomes) = run_trials(&s, 99, 40).unwrap();
    let text = to_jsonl(&trace);
    let back = read_jsonl(BufReader::new(text.as_bytes())).unwrap();
    assert_eq!(back, trace);
    let r = report(&back);
    assert_eq!(r, report(&trace));
    assert_eq!(r.trials, 40);
    assert_eq!(r.completed as usize, outcomes.iter().filter(|o| o.completed).count());
    assert_eq!(r.failures.values().sum::<u64>(), 40 - r.completed);
}

#[test]
fn seeds_are_reproducible_and_distinct() {
    let s = scenario("pilot");
    let a = to_jsonl(&run_trials(&s, 1, 20).unwrap().0);
    let b = to_jsonl(&run_trials(&s, 1, 20).unwrap().0);
    let c = to_jsonl(&run_trials(&s, 2, 20).unwrap().0);
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn live_mode_with_a_console_answering() {
    let s = scenario("scenario-b");
    let config = LiveConfig {
        tcp: Some("127.0.0.1:0".parse().unwrap()),
        http: Some("127.0.0.1:0".parse().unwrap()),
        time_scale: 400.0,
        simulate_humans: false,
        poll: Duration::from_millis(10),
    };
    let (tx, rx) = std::sync::mpsc::channel();
    let console = std::thread::spawn(move || {
        let addr = rx.recv().unwrap();
        let mut c = Client::connect(addr).unwrap();
        c.join(Profile::new("console", AgentKind::Console)).unwrap();
        for _ in 0..500 {
            let snap = c.snapshot(TaskFilter::preferences(&[Preference::Human])).unwrap();
            if let Some(t) = snap.tasks.into_iter().find(|t| t.status == TaskStatus::Posted) {
                assert!(c.claim(&t.id, t.version, false).unwrap().is_ok());
                c.update(&t.id, UpdateRequest::status(TaskStatus::InProgress)).unwrap();
                c.update(&t.id, UpdateRequest::status(TaskStatus::Done)).unwrap();
                return t.instruction;
            }
            std::thread::sleep(Duration::from_millis(10));
        }
        panic!("no human task appeared");
    });
    let (_, o) = run_live(&s, 0, &config, |server| tx.send(server.tcp_addr().unwrap()).unwrap()).unwrap();
    assert_eq!(console.join().unwrap(), "move the chairs");
    assert!(o.completed, "{o:?}");
}
