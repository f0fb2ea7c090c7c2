//! Seeded random streams.
//!
//! Every random draw in the crate comes from a `xoshiro256++` generator
//! (`rand_xoshiro::Xoshiro256PlusPlus`) seeded through `seed_from_u64`,
//! which expands the 64-bit seed with SplitMix64. Independent streams are
//! obtained by hashing `(seed, stream, index)` into a fresh 64-bit seed, so
//! clip `i` of a corpus depends only on the corpus seed and `i`.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type Rng = Xoshiro256PlusPlus;

/// Name recorded in checkpoints for the generator above.
pub const RNG_ALGORITHM: &str = "xoshiro256++/splitmix64-seeded";

/// Stream identifiers; distinct constants keep unrelated draws decorrelated.
pub mod stream {
    pub const CORPUS_CLIP: u64 = 0x636c_6970;
    pub const INIT: u64 = 0x696e_6974;
    pub const SHUFFLE: u64 = 0x7368_7566;
    pub const DROPOUT: u64 = 0x6472_6f70;
    pub const PROBE: u64 = 0x7072_6f62;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ stream) ^ index)
}

pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

pub fn stream_rng(seed: u64, stream: u64, index: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, stream, index))
}
