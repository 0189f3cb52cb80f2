//! Deterministic seed derivation.
//!
//! Every random stream in the toolkit is a `ChaCha8Rng` seeded from a
//! `u64`. Child seeds (ensemble members, restarts, examples, epochs) are
//! derived with [`split`], a splitmix64 step keyed by the parent seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// The splitmix64 finalizer. A bijection on `u64`.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the `index`-th child of `parent`.
///
/// For a fixed parent this is injective in `index`: multiplication by the
/// odd golden-ratio constant, the offset by `parent` and [`mix64`] are all
/// bijections modulo 2^64.
pub fn split(parent: u64, index: u64) -> u64 {
    mix64(parent.wrapping_add(GOLDEN_GAMMA.wrapping_mul(index)))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
