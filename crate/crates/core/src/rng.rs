//! Keyed random streams.
//!
//! Every random decision in the crate draws from a stream derived from the
//! run seed plus a tuple of tags (split, epoch, sample id, purpose, ...), so
//! results never depend on the order in which samples are processed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Purpose tags for stream derivation.
pub mod purpose {
    pub const GENERATE: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const SHUFFLE: u64 = 3;
    pub const CROP: u64 = 4;
    pub const RCM: u64 = 5;
    pub const JIGSAW: u64 = 6;
    pub const NEGATIVES: u64 = 7;
    pub const BANK_INIT: u64 = 8;
    pub const DIVERSIFY: u64 = 9;
    pub const PARAM_INIT: u64 = 10;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a seed with an ordered list of tags into a single 64-bit key.
pub fn mix(seed: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(seed), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn stream(seed: u64, tags: &[u64]) -> Rng {
    Rng::seed_from_u64(mix(seed, tags))
}

/// 64-bit FNV-1a, used for parameter names and config hashes.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}
