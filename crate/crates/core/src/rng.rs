//! Seeded random streams. Every stochastic routine takes a caller-supplied RNG
//! or a `(seed, stream)` pair so runs are reproducible.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type CoreRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> CoreRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent counter-based stream `stream` under `seed`; chain `i` of a
/// sampler uses stream `i` regardless of how chains are batched.
pub fn stream(seed: u64, stream: u64) -> CoreRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A fresh seed for sub-task `tag`, so one master seed drives several
/// independent components.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    stream(seed, tag).random()
}

#[inline]
pub fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

#[inline]
pub fn uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.random::<f64>()
}

/// Fisher-Yates shuffle.
pub fn shuffle<T, R: Rng + ?Sized>(items: &mut [T], rng: &mut R) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}
