//! Randomness as a sequence of categorical choices.
//!
//! All stochastic behaviour in the simulator goes through
//! [`Randomness::pick`]. A seeded stream drives normal runs; a scripted
//! source lets the enumerator walk every branch of an episode.

use std::cell::RefCell;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub trait Randomness {
    /// Index of the chosen weight. Weights are non-negative and need not sum
    /// to one; a zero-weight index is never returned.
    fn pick(&mut self, weights: &[f64]) -> usize;

    fn chance(&mut self, p: f64) -> bool {
        self.pick(&[p, 1.0 - p]) == 0
    }
}

/// Seeded stream backed by ChaCha8.
#[derive(Debug, Clone)]
pub struct Stream(ChaCha8Rng);

impl Stream {
    pub fn from_seed(seed: [u8; 32]) -> Self {
        Stream(ChaCha8Rng::from_seed(seed))
    }

    pub fn from_u64(seed: u64) -> Self {
        Stream(ChaCha8Rng::seed_from_u64(seed))
    }
}

impl Randomness for Stream {
    fn pick(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        assert!(total > 0.0, "pick over all-zero weights");
        let u = self.0.random::<f64>() * total;
        let mut acc = 0.0;
        let mut last = 0;
        for (i, w) in weights.iter().enumerate() {
            if *w <= 0.0 {
                continue;
            }
            acc += w;
            last = i;
            if u < acc {
                return i;
            }
        }
        last
    }
}

/// Seed for the stream named `label` in trial `trial` of a run.
pub fn derive_seed(master: u64, trial: u64, label: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(trial.to_le_bytes());
    h.update(label.as_bytes());
    h.finalize().into()
}

/// Hands out one independent stream per label.
pub trait Entropy {
    fn stream(&mut self, label: &str) -> Box<dyn Randomness>;
}

/// Production entropy: per-label ChaCha streams derived from a master seed.
pub struct Seeded {
    pub master: u64,
    pub trial: u64,
}

impl Entropy for Seeded {
    fn stream(&mut self, label: &str) -> Box<dyn Randomness> {
        Box::new(Stream::from_seed(derive_seed(self.master, self.trial, label)))
    }
}

/// One recorded choice point.
#[derive(Debug, Clone)]
struct Choice {
    weights: Vec<f64>,
    taken: usize,
}

#[derive(Debug, Default)]
struct Script {
    prefix: Vec<usize>,
    made: Vec<Choice>,
    limit: usize,
    overflow: bool,
}

/// Replays a fixed prefix of choices, then takes the first non-zero branch
/// at every later choice point, recording everything it did.
#[derive(Clone)]
pub struct Scripted(Rc<RefCell<Script>>);

impl Scripted {
    fn new(prefix: Vec<usize>, limit: usize) -> Self {
        Scripted(Rc::new(RefCell::new(Script {
            prefix,
            made: Vec::new(),
            limit,
            overflow: false,
        })))
    }
}

impl Randomness for Scripted {
    fn pick(&mut self, weights: &[f64]) -> usize {
        let mut s = self.0.borrow_mut();
        let depth = s.made.len();
        if depth >= s.limit {
            s.overflow = true;
        }
        let taken = match s.prefix.get(depth) {
            Some(&i) => i,
            None => weights.iter().position(|w| *w > 0.0).expect("pick over all-zero weights"),
        };
        s.made.push(Choice {
            weights: weights.to_vec(),
            taken,
        });
        taken
    }
}

impl Entropy for Scripted {
    fn stream(&mut self, _label: &str) -> Box<dyn Randomness> {
        Box::new(self.clone())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnumerationError {
    #[error("branch tree exceeds {0} choices along one path; is a retry bound missing?")]
    TooDeep(usize),
    #[error("branch tree has more than {0} leaves")]
    TooWide(usize),
}

/// Depth-first walk over every branch of a stochastic computation.
///
/// `run` is called once per leaf with a scripted entropy source and returns
/// the value of that leaf. The result is the probability-weighted sum over
/// leaves, plus the number of leaves visited.
pub fn enumerate<F>(max_depth: usize, max_leaves: usize, mut run: F) -> Result<(f64, usize), EnumerationError>
where
    F: FnMut(&mut Scripted) -> f64,
{
    let mut prefix: Vec<usize> = Vec::new();
    let mut total = 0.0;
    let mut leaves = 0;
    loop {
        let mut script = Scripted::new(prefix.clone(), max_depth);
        let value = run(&mut script);
        let s = script.0.borrow();
        if s.overflow {
            return Err(EnumerationError::TooDeep(max_depth));
        }
        leaves += 1;
        if leaves > max_leaves {
            return Err(EnumerationError::TooWide(max_leaves));
        }
        let p: f64 = s.made.iter().map(|c| c.weights[c.taken] / c.weights.iter().sum::<f64>()).product();
        total += p * value;

        // Backtrack to the deepest choice with an untried non-zero sibling.
        let mut next = None;
        for (d, c) in s.made.iter().enumerate().rev() {
            if let Some(sib) = (c.taken + 1..c.weights.len()).find(|&i| c.weights[i] > 0.0) {
                next = Some((d, sib));
                break;
            }
        }
        match next {
            None => return Ok((total, leaves)),
            Some((d, sib)) => {
                prefix = s.made[..d].iter().map(|c| c.taken).collect();
                prefix.push(sib);
            }
        }
    }
}
