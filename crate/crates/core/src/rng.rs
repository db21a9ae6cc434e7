//! Reproducible random streams.
//!
//! Every randomized routine takes a master seed and derives independent
//! ChaCha streams keyed by indices (replicate, row, imputation), so results
//! do not depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type TtRng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a list of indices into a single 64-bit key.
pub fn derive_key(seed: u64, keys: &[u64]) -> u64 {
    keys.iter().fold(splitmix(seed), |acc, k| splitmix(acc ^ splitmix(*k)))
}

pub fn seeded(seed: u64) -> TtRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream `keys` of the master seed.
pub fn stream(seed: u64, keys: &[u64]) -> TtRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(derive_key(seed, keys));
    rng
}
