//! Time sources for the board. Simulations drive a [`VirtualClock`]; a live
//! deployment uses [`WallClock`].

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

pub trait Clock: Send + Sync {
    /// Seconds since the clock's epoch.
    fn now(&self) -> f64;
}

/// Manually advanced clock. Never moves backwards.
#[derive(Debug, Default)]
pub struct VirtualClock {
    bits: AtomicU64,
}

impl VirtualClock {
    pub fn new(start: f64) -> Self {
        VirtualClock {
            bits: AtomicU64::new(start.to_bits()),
        }
    }

    /// Move the clock to `t`; earlier values are ignored.
    pub fn advance_to(&self, t: f64) {
        let mut cur = self.bits.load(Ordering::Acquire);
        while f64::from_bits(cur) < t {
            match self
                .bits
                .compare_exchange(cur, t.to_bits(), Ordering::AcqRel, Ordering::Acquire)
            {
                Ok(_) => return,
                Err(seen) => cur = seen,
            }
        }
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> f64 {
        f64::from_bits(self.bits.load(Ordering::Acquire))
    }
}

/// Wall time since construction, multiplied by `scale`.
#[derive(Debug)]
pub struct WallClock {
    start: Instant,
    scale: f64,
}

impl WallClock {
    pub fn new(scale: f64) -> Self {
        WallClock {
            start: Instant::now(),
            scale,
        }
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }
}

impl Clock for WallClock {
    fn now(&self) -> f64 {
        self.start.elapsed().as_secs_f64() * self.scale
    }
}
