//! Deterministic seeded randomness.
//!
//! A thin wrapper over ChaCha8 so every draw (uniform, bounded, normal,
//! shuffle) is pinned to this crate and cannot drift with upstream
//! distribution-sampling changes.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

const TWO_PI: f64 = 2.0 * core::f64::consts::PI;

/// Seeded random stream used for weight init, splits, shuffles and noise.
#[derive(Debug, Clone)]
pub struct SeedRng(ChaCha8Rng);

impl SeedRng {
    pub fn new(seed: u64) -> Self {
        SeedRng(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn unit_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn range_f64(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit_f64()
    }

    /// Unbiased uniform integer in `[0, n)`; `n` must be nonzero.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        let n = n as u64;
        // rejection sampling over the largest multiple of n
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    /// Standard normal draw via Box-Muller.
    pub fn normal_f64(&mut self) -> f64 {
        let u1 = 1.0 - self.unit_f64(); // (0, 1], keeps ln finite
        let u2 = self.unit_f64();
        crate::math::sqrt(-2.0 * crate::math::ln(u1)) * crate::math::cos(TWO_PI * u2)
    }

    /// Normal draw with the given standard deviation.
    pub fn normal_with_std(&mut self, std: f64) -> f64 {
        self.normal_f64() * std
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }
}
