//! Seed derivation. Every stage seed is a pure function of the master seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed for a named stage.
pub fn derive(seed: u64, tag: &str) -> u64 {
    tag.bytes()
        .fold(splitmix64(seed), |acc, b| splitmix64(acc ^ b as u64))
}

/// Child seed for the `index`-th item of a stream.
pub fn derive_index(seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ index.wrapping_mul(0xd1b5_4a32_d192_ed03))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tags_and_indices_separate() {
        assert_ne!(derive(1, "attack"), derive(1, "corpus"));
        assert_ne!(derive(1, "attack"), derive(2, "attack"));
        assert_ne!(derive_index(5, 0), derive_index(5, 1));
        assert_eq!(derive(9, "cv"), derive(9, "cv"));
    }
}
