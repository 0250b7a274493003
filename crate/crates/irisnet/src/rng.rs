//! Deterministic randomness plumbing.
//!
//! Every stochastic choice in the crate flows from a `u64` master seed
//! through [`derive_seed`] into its own ChaCha stream. Streams are keyed by
//! purpose so that, e.g., the epoch-3 augmentation of sample 17 is the same
//! bits no matter what ran before it.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags keeping unrelated consumers of the same master seed apart.
pub mod stream {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const AUGMENT: u64 = 3;
    pub const PHANTOM: u64 = 4;
    pub const SPLIT: u64 = 5;
    pub const BENCH: u64 = 6;
}

fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a master seed with two stream coordinates into a child seed.
pub fn derive_seed(master: u64, a: u64, b: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ a) ^ b)
}

/// A ChaCha generator for one derived stream. ChaCha output is identical
/// across platforms, which keeps file outputs byte-reproducible.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
