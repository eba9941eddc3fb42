//! A transactional task board shared by robots, humans and operator
//! consoles. Agents join, post tasks with an executor preference, claim them
//! with compare-and-swap on the task version, move them through a fixed
//! lifecycle and follow changes through ordered, resumable event streams.
//!
//! The [`Board`] is usable in-process; [`server`] exposes it over a
//! line-delimited JSON stream and an HTTP facade.

pub mod board;
pub mod client;
pub mod clock;
pub mod error;
pub mod server;
pub mod task;
pub mod wire;

pub use board::{
    AgentKind, Board, ClaimOutcome, Event, Profile, Session, Snapshot, Subscription, UpdateRequest,
    DEFAULT_LIVENESS,
};
pub use client::{Client, ResilientSubscriber};
pub use clock::{Clock, VirtualClock, WallClock};
pub use error::HrfsError;
pub use server::{Server, ServerConfig};
pub use task::{Payload, Preference, Task, TaskFilter, TaskSpec, TaskStatus};
