//! Seeded generator used for synthetic weights and random test tensors.
//!
//! The stream is xoshiro256** whose 256-bit state is filled from the `u64`
//! seed by SplitMix64 (the `seed_from_u64` construction of `rand_xoshiro`).
//! A uniform `f32` in `[0, 1)` is taken from the top 24 bits of each output:
//! `(next_u64() >> 40) as f32 * 2^-24`. Any implementation that follows these
//! three rules reproduces the same values bit for bit.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

pub struct SeededRng {
    inner: Xoshiro256StarStar,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: Xoshiro256StarStar::seed_from_u64(seed),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 24 bits of resolution.
    pub fn next_unit(&mut self) -> f32 {
        (self.next_u64() >> 40) as f32 * (1.0 / (1u32 << 24) as f32)
    }

    /// Uniform in `[lo, hi)`, computed as `lo + (hi - lo) * u` in `f32`.
    pub fn uniform(&mut self, lo: f32, hi: f32) -> f32 {
        lo + (hi - lo) * self.next_unit()
    }

    /// Uniform integer in `[0, n)`. Uses the modulo reduction, so a tiny bias is accepted.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0);
        self.next_u64() % n
    }
}
