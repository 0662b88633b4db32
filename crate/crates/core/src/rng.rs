//! Seeding conventions. Every random stream in the crate is a
//! [`ChaCha20Rng`] created with `seed_from_u64`, and child seeds are derived
//! from a base seed with a splitmix64 chain so that any cell of an experiment
//! can be regenerated on its own.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Recorded in run manifests.
pub const PRNG_ID: &str = "ChaCha20Rng/rand_chacha-0.9/seed_from_u64; child seeds: splitmix64 chain";

/// Stage tags mixed into derived seeds.
pub mod stage {
    pub const TRAINING_SAMPLE: u64 = 1;
    pub const ESTIMATOR_ERROR: u64 = 2;
    pub const BVN_SAMPLING: u64 = 3;
    pub const ESTIMATOR_FIT: u64 = 4;
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `h = splitmix64(base)`, then `h = splitmix64(h ^ part)` for each part in order.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix64(base), |h, &p| splitmix64(h ^ p))
}

pub fn rng_from_seed(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}
