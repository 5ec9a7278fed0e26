//! Portable randomness.
//!
//! All draws come from ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded with
//! `seed_from_u64`, whose output stream is fixed by the algorithm and does
//! not depend on platform or on `rand` distribution code. Index draws use
//! rejection sampling on raw `u64` words; unit floats take the top 53 bits.
//!
//! Seeds for independent runs are derived with SplitMix64 finalization:
//! `derive_seed(base, &[a, b, ..])` folds each component in turn as
//! `h = mix(h ^ mix(component + (i + 1) * GOLDEN))`, where `mix` is the
//! SplitMix64 output function and `i` the component position.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output mixing.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(base: u64, components: &[u64]) -> u64 {
    let mut h = mix64(base);
    for (i, &c) in components.iter().enumerate() {
        let salt = GOLDEN.wrapping_mul(i as u64 + 1);
        h = mix64(h ^ mix64(c.wrapping_add(salt)));
    }
    h
}

#[derive(Debug, Clone)]
pub struct SimRng {
    inner: ChaCha8Rng,
}

impl SimRng {
    pub fn from_seed(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform integer in `0..n`. Panics if `n == 0`.
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0, "index range must be nonempty");
        let n = n as u64;
        // largest multiple of n that fits; reject draws at or above it
        let zone = u64::MAX - (u64::MAX % n + 1) % n;
        loop {
            let v = self.next_u64();
            if v <= zone {
                return (v % n) as usize;
            }
        }
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `[lo, hi]`; returns `lo` exactly when `lo == hi`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        if lo == hi {
            return lo;
        }
        lo + (hi - lo) * self.unit()
    }
}
