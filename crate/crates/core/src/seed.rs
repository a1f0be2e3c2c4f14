//! Derivation of independent RNG streams from a base seed and indices.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds `parts` into one seed. Order matters; equal inputs give equal seeds.
pub fn mix(parts: &[u64]) -> u64 {
    parts.iter().fold(0x5eed_u64, |acc, &p| splitmix(acc ^ splitmix(p)))
}

pub fn rng(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(parts))
}
