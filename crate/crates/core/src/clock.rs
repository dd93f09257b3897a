//! Fixed-step simulation clock.

use serde::{Deserialize, Serialize};

/// Default seconds per tick.
pub const DEFAULT_DT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimClock {
    tick: u64,
    dt: f64,
}

impl SimClock {
    /// Panics if `dt` is not a positive finite number.
    pub fn new(dt: f64) -> Self {
        assert!(dt.is_finite() && dt > 0.0, "dt must be positive, was {dt}");
        Self { tick: 0, dt }
    }

    pub fn at(tick: u64, dt: f64) -> Self {
        Self { tick, ..Self::new(dt) }
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Simulated seconds since tick 0.
    pub fn elapsed(&self) -> f64 {
        self.tick as f64 * self.dt
    }

    /// Returns the clock one tick later.
    #[must_use]
    pub fn advance(self) -> Self {
        Self {
            tick: self.tick + 1,
            dt: self.dt,
        }
    }
}

impl Default for SimClock {
    fn default() -> Self {
        Self::new(DEFAULT_DT)
    }
}
