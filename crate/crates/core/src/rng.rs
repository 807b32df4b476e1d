//! The one random source used everywhere in the crate.
//!
//! `DecodeRng` is ChaCha8 (RFC 7539 block function, 8 rounds) keyed by
//! expanding a `u64` seed with `rand_core`'s `seed_from_u64` (PCG32 fill),
//! with an explicit 64-bit stream id. Derived draws are defined here rather
//! than borrowed from a distribution crate so traces replay identically
//! across implementations:
//!
//! * `uniform()` = `(next_u64 >> 11) * 2^-53`, in `[0, 1)`.
//! * `gaussian()` = Box-Muller cosine branch on two `uniform()` draws
//!   (`u1` is reflected to `1 - u1` so the log argument is never zero).
//! * `sample_index(p)` = first index whose running sum exceeds `uniform()`.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stream ids used to split one episode seed into independent sources.
pub mod stream {
    pub const WORLD: u64 = 0;
    pub const EXPERT: u64 = 1;
    pub const DECODE: u64 = 2;
}

#[derive(Clone, Debug)]
pub struct DecodeRng(ChaCha8Rng);

impl DecodeRng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self(rng)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    pub fn uniform(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn gaussian(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Index in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        ((self.uniform() * n as f64) as usize).min(n.saturating_sub(1))
    }

    /// Draws an index from a probability vector. Zero-probability entries are
    /// never returned.
    pub fn sample_index(&mut self, probs: &[f64]) -> Option<usize> {
        let u = self.uniform();
        let mut acc = 0.0;
        let mut last = None;
        for (i, &p) in probs.iter().enumerate() {
            if p <= 0.0 {
                continue;
            }
            acc += p;
            last = Some(i);
            if u < acc {
                return Some(i);
            }
        }
        last
    }
}
