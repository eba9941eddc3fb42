//! Exact completion probability by walking every branch of an episode.

use serde::{Deserialize, Serialize};

use super::harness::{run_trial, SimError};
use super::Scenario;
use crate::rng::{enumerate, EnumerationError};

pub const MAX_DEPTH: usize = 10_000;
pub const MAX_LEAVES: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub probability: f64,
    pub leaves: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum OracleError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Enumeration(#[from] EnumerationError),
    #[error("no hardware rate in [0, 1] gives completion {0}")]
    Unreachable(f64),
}

/// Probability that every operator task completes, summed over all branches.
pub fn derive_completion_probability(scenario: &Scenario) -> Result<OracleResult, OracleError> {
    let mut failure = None;
    let (probability, leaves) = enumerate(MAX_DEPTH, MAX_LEAVES, |script| {
        match run_trial(scenario, script, 0, 0) {
            Ok((_, o)) => f64::from(u8::from(o.completed)),
            Err(e) => {
                failure.get_or_insert(e);
                0.0
            }
        }
    })?;
    if let Some(e) = failure {
        return Err(e.into());
    }
    Ok(OracleResult { probability, leaves })
}

/// Per-robot hardware failure rate at which the completion probability
/// equals `target`. Completion falls as the rate rises, so bisect.
pub fn fit_hardware_rate(scenario: &Scenario, target: f64) -> Result<f64, OracleError> {
    let at = |h: f64| -> Result<f64, OracleError> {
        let mut s = scenario.clone();
        s.faults.p_hardware = h;
        s.faults.hardware_overrides.clear();
        Ok(derive_completion_probability(&s)?.probability)
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    if target > at(lo)? || target < at(hi)? {
        return Err(OracleError::Unreachable(target));
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if at(mid)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
