//! Seed derivation. Every random draw in the crate comes from a
//! [`ChaCha8Rng`] seeded through [`derive_seed`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Mixes a base seed with a stream tag (SplitMix64 finaliser).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream tags for the different consumers of randomness in one erasure step.
pub mod stream {
    pub const ENCODER_INIT: u64 = 1;
    pub const RFF_ENC_Z: u64 = 2;
    pub const RFF_ENC_X: u64 = 3;
    pub const RFF_ENC_XI: u64 = 4;
    pub const RFF_EVP_Z: u64 = 5;
    pub const RFF_EVP_X: u64 = 6;
    pub const RFF_EVP_XI: u64 = 7;
    pub const MEDIAN: u64 = 8;
    pub const HSIC_READING: u64 = 9;
    pub const SPLIT: u64 = 10;
    pub const PROBE: u64 = 11;
}
