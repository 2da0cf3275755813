//! Deterministic RNG streams derived from `(seed, id, ...)` tuples.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a sequence of words into one 64-bit seed.
pub fn mix(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x243F_6A88_85A3_08D3, |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng_for(parts: &[u64]) -> Rng {
    Rng::seed_from_u64(mix(parts))
}

/// Stream tags keep independent draws for the same instance apart.
pub mod stream {
    pub const INSTANCE: u64 = 1;
    pub const TARGET: u64 = 2;
    pub const SHUFFLE: u64 = 3;
    pub const OBJECTIVE: u64 = 4;
    pub const INIT: u64 = 5;
    pub const LIFT: u64 = 6;
    pub const KMEANS: u64 = 7;
}
