//! Plan, execute and detect loop for robots sharing a task board, plus the
//! deterministic simulator used to evaluate it.

pub mod planner;
pub mod rng;
pub mod runtime;
pub mod sim;
pub mod skills;
pub mod vqa;
pub mod world;
