//! Seed derivation. Every randomized stage takes an explicit seed; per-item
//! streams are derived from it so that parallel evaluation order never
//! changes results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Seed for the stream named `key` under `seed`.
pub fn derive_seed(seed: u64, key: &str) -> u64 {
    splitmix64(seed ^ splitmix64(fnv1a(key.as_bytes())))
}

pub fn rng_from(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

pub fn rng_for(seed: u64, key: &str) -> Rng {
    rng_from(derive_seed(seed, key))
}
