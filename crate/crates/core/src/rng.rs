//! Seeded randomness.
//!
//! Every stochastic component draws from [`SimRng`], a PCG XSL-RR 128/64
//! generator (`rand_pcg::Pcg64`). Independent streams are derived from a base
//! seed and a path of integer tags with a SplitMix64 finalizer, so episode `k`
//! of cell `(n, seed)` always sees the same stream regardless of scheduling.

use rand::SeedableRng;

pub type SimRng = rand_pcg::Pcg64;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `base` and a path of stream tags.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(base), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn rng_from_seed(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

pub fn stream(base: u64, tags: &[u64]) -> SimRng {
    rng_from_seed(derive_seed(base, tags))
}

/// Stream tags used across the crate. Changing a value changes every result.
pub mod tags {
    pub const DATASET: u64 = 1;
    pub const REGRESSION: u64 = 2;
    pub const QNET_INIT: u64 = 3;
    pub const AGENT: u64 = 4;
    pub const SIMULATOR: u64 = 5;
    pub const EVALUATION: u64 = 6;
    pub const FINAL_EVALUATION: u64 = 7;
    pub const THEORY: u64 = 8;
}
