//! Seed derivation.
//!
//! Every random stream in the crate is a `ChaCha8Rng` seeded from a 64-bit
//! value obtained by hashing a parent seed with a list of integer tags. Streams
//! derived with distinct tags are independent of each other, so per-particle
//! streams can be drawn in any order or on any thread.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(parent: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(splitmix64(parent), |acc, &t| {
        splitmix64(acc ^ splitmix64(t))
    })
}

pub fn rng_for(parent: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(parent, tags))
}

/// Tags naming the independent streams of an experiment.
pub mod stream {
    pub const WORLD: u64 = 1;
    pub const TRAJECTORY: u64 = 2;
    pub const INIT: u64 = 3;
    pub const ODOMETRY: u64 = 4;
    pub const COMPASS: u64 = 5;
    pub const RESAMPLE: u64 = 6;
    pub const PREDICT: u64 = 7;
    pub const EMBED: u64 = 8;
}
