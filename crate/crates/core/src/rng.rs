//! Seed derivation and deterministic RNG construction.
//!
//! Every stochastic component draws from its own ChaCha stream derived from
//! the run seed and a purpose tag, so adding or removing one consumer never
//! shifts the draws seen by another.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub mod tag {
    pub const DATA: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const BATCH: u64 = 3;
    pub const INIT: u64 = 4;
    pub const AUGMENT: u64 = 5;
}

/// splitmix64-style mixing of a seed and a purpose tag.
pub fn derive(seed: u64, tag: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(tag.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive with a third component (epoch, step, example index, ...).
pub fn derive2(seed: u64, tag: u64, idx: u64) -> u64 {
    derive(derive(seed, tag), idx.wrapping_add(0x5851_F42D_4C95_7F2D))
}

pub fn rng_for(seed: u64, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, tag))
}

pub fn rng_for2(seed: u64, tag: u64, idx: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive2(seed, tag, idx))
}
