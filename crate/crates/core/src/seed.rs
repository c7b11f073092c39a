//! Seed derivation.
//!
//! A master seed fans out into independent stage seeds through a labeled
//! derivation (`derive_seed(master, "dea")`), and stage seeds fan out into
//! per-item streams through an index (`derive_indexed(stage, i)`). Both are
//! SplitMix64 finalizers over a mixed key, so streams never depend on the order
//! in which items are evaluated.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used by every stochastic stage.
pub type StageRng = ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xCBF2_9CE4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
    }
    hash
}

/// Derives the seed for a named stage from the master seed.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    splitmix64(splitmix64(master) ^ fnv1a64(label.as_bytes()))
}

/// Derives the seed for the `index`-th item (group, fold, replicate,
/// permutation) of a stage.
pub fn derive_indexed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index.wrapping_add(GOLDEN_GAMMA)))
}

pub fn rng_from_seed(seed: u64) -> StageRng {
    StageRng::seed_from_u64(seed)
}
