//! Deterministic seeding.
//!
//! Every random stream in the crate is a ChaCha8 generator whose 64-bit seed
//! is derived from a tuple of integers (corpus key, namespace tag, indices)
//! by chaining the SplitMix64 finalizer. Both pieces are fixed algorithms, so
//! corpora and initializations are identical across runs and platforms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub mod tag {
    pub const CORPUS_MAP: u64 = 0x11;
    pub const SPEAKER: u64 = 0x12;
    pub const CLEAN: u64 = 0x13;
    pub const NOISE: u64 = 0x14;
    pub const EXAMPLE: u64 = 0x15;
    pub const INIT: u64 = 0x16;
    pub const TRAIN: u64 = 0x17;
    pub const EVAL: u64 = 0x18;
    pub const GUEST: u64 = 0x19;
    pub const ENROLL: u64 = 0x1a;
}

/// SplitMix64 output function.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x6D75_7666_u64, |acc, &p| mix64(acc ^ mix64(p)))
}

pub fn rng_for(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(parts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn derived_streams_are_stable_and_distinct() {
        let a: u64 = rng_for(&[1, 2, 3]).gen();
        let b: u64 = rng_for(&[1, 2, 3]).gen();
        let c: u64 = rng_for(&[1, 3, 2]).gen();
        assert_eq!(a, b);
        assert_ne!(a, c);
        // pinned so a change of algorithm is caught
        assert_eq!(derive_seed(&[]), 0x6D75_7666);
        assert_eq!(mix64(0), 0xE220_A839_7B1D_CDAF);
    }
}
