//! Seeded random streams.
//!
//! A run owns one root seed. Every consumer asks for a named stream, so the
//! draw sequence of one module is independent of how many draws any other
//! module makes.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Root of all randomness in a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedRoot(pub u64);

impl SeedRoot {
    /// Opens the stream identified by `name`.
    pub fn stream(&self, name: &str) -> SimRng {
        SimRng::new(mix(self.0 ^ fnv1a(name.as_bytes())))
    }

    /// Opens a stream identified by a name plus an index (per-agent streams).
    pub fn indexed_stream(&self, name: &str, index: u64) -> SimRng {
        SimRng::new(mix(mix(self.0 ^ fnv1a(name.as_bytes())) ^ index))
    }
}

/// Deterministic generator; identical seeds yield identical sequences.
#[derive(Debug, Clone)]
pub struct SimRng {
    inner: ChaCha8Rng,
}

impl SimRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Draw from N(0, sigma²). Zero sigma consumes a draw and returns 0 so
    /// toggling noise does not shift later draws.
    pub fn gaussian(&mut self, sigma: f64) -> f64 {
        let z: f64 = StandardNormal.sample(&mut self.inner);
        z * sigma
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325_u64, |h, b| {
        (h ^ u64::from(*b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

// splitmix64 finalizer
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
