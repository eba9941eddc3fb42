//! Live mode: the same episode on a scaled wall clock with the board served
//! over TCP and HTTP, so consoles and people can take part.

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use vader_hrfs::{Board, Clock, Server, ServerConfig, TaskStatus, WallClock};

use super::harness::{Episode, SimError, TrialOutcome};
use super::trace::Record;
use super::Scenario;
use crate::rng::Seeded;

#[derive(Debug, Clone)]
pub struct LiveConfig {
    pub tcp: Option<SocketAddr>,
    pub http: Option<SocketAddr>,
    /// Simulated seconds per wall-clock second.
    pub time_scale: f64,
    /// Keep the simulated humans; otherwise people on the console answer.
    pub simulate_humans: bool,
    pub poll: Duration,
}

impl Default for LiveConfig {
    fn default() -> Self {
        LiveConfig {
            tcp: None,
            http: Some(SocketAddr::from(([127, 0, 0, 1], 8080))),
            time_scale: 1.0,
            simulate_humans: false,
            poll: Duration::from_millis(50),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LiveError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("cannot serve the board: {0}")]
    Io(#[from] std::io::Error),
}

/// Run one episode live. `started` sees the server once it is listening.
pub fn run_live(
    scenario: &Scenario,
    seed: u64,
    config: &LiveConfig,
    started: impl FnOnce(&Server),
) -> Result<(Vec<Record>, TrialOutcome), LiveError> {
    let clock = Arc::new(WallClock::new(config.time_scale));
    let board = Arc::new(Board::with_liveness(clock.clone(), scenario.liveness));
    let server = Server::start(
        board.clone(),
        ServerConfig {
            tcp: config.tcp,
            http: config.http,
            reap_every: None,
        },
    )?;
    started(&server);
    let mut ep = Episode::with_board(
        scenario,
        &mut Seeded { master: seed, trial: 0 },
        0,
        seed,
        clock.clone(),
        board.clone(),
        config.simulate_humans,
    )?;
    let settled = |ep: &Episode| {
        !ep.roots().is_empty()
            && ep
                .roots()
                .iter()
                .all(|id| board.task(id).is_some_and(|t| t.status.is_terminal() || t.status == TaskStatus::Done))
    };
    let now = loop {
        let now = clock.now();
        ep.step(now)?;
        if settled(&ep) || now > scenario.horizon {
            break now;
        }
        let wait = ep
            .next_wake(now)
            .map(|t| Duration::from_secs_f64(((t - now) / config.time_scale).max(0.0)))
            .unwrap_or(config.poll)
            .min(config.poll);
        std::thread::sleep(wait);
    };
    let terminated = settled(&ep);
    let result = ep.finish(now, terminated);
    server.stop();
    Ok(result)
}
