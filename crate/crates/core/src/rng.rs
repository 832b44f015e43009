//! Seeded randomness.
//!
//! Every random draw in the toolkit comes from ChaCha8 (`rand_chacha` 0.9),
//! seeded with `ChaCha8Rng::seed_from_u64(seed)`. Independent consumers of
//! the same seed use distinct ChaCha stream ids (see [`Stream`]), so for
//! example the dropout mask never shifts when the shuffle order changes.
//!
//! Index draws use the multiply-shift reduction `(next_u64 * n) >> 64`
//! rather than `rand`'s range sampling, so the permutation produced by
//! [`shuffle`] is pinned to this file and not to a `rand` release.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// ChaCha stream ids used for the independent random consumers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Split = 0,
    Init = 1,
    Shuffle = 2,
    Dropout = 3,
    Synth = 4,
    Embedding = 5,
}

pub fn seeded(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Uniform index in `0..n`. `n` must be non-zero.
pub fn index(rng: &mut impl RngCore, n: usize) -> usize {
    debug_assert!(n > 0);
    ((rng.next_u64() as u128 * n as u128) >> 64) as usize
}

/// Uniform real in `[0, 1)` with 53 random bits.
pub fn unit(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal draw (Box-Muller, cosine branch only).
pub fn normal(rng: &mut impl RngCore) -> f64 {
    let u1 = 1.0 - unit(rng);
    let u2 = unit(rng);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Fisher-Yates, walking from the last element down.
pub fn shuffle<T>(items: &mut [T], rng: &mut impl RngCore) {
    for i in (1..items.len()).rev() {
        let j = index(rng, i + 1);
        items.swap(i, j);
    }
}
