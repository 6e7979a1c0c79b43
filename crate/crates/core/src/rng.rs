//! Seeded random streams.
//!
//! Every stochastic routine takes an explicit generator. Parallel work derives
//! one independent stream per task from a base seed so results do not depend
//! on scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Generator for `seed`.
pub fn stream(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Seed of sub-task `index` under `base`: `base ⊕ index`.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    base ^ index
}

/// Uniform draw from `[lo, hi]`; returns `lo` when the range is a point.
pub fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return lo;
    }
    lo + (hi - lo) * rng.gen::<f64>()
}
