//! Seed handling.
//!
//! Every random stream is a `ChaCha8Rng` seeded from a `u64`. Child seeds are
//! derived from a parent seed and a stream index with one SplitMix64 step, so
//! the seed tree is fixed by the master seed alone.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives the seed of child stream `stream` from `parent`.
pub fn derive_seed(parent: u64, stream: u64) -> u64 {
    splitmix64(parent ^ splitmix64(stream.wrapping_add(0x5851_f42d_4c95_7f2d)))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Named stages fed from one master seed.
pub mod stream {
    pub const DESIGN: u64 = 1;
    pub const MCMC: u64 = 2;
    pub const STUDY: u64 = 3;
    pub const SURROGATE: u64 = 4;
    pub const PRIOR: u64 = 5;
    pub const AUGMENT: u64 = 6;
    pub const REDUCE: u64 = 7;
    pub const REALIZATION: u64 = 8;
    pub const NOISE: u64 = 9;
    pub const FIELD: u64 = 10;
}
