//! Child-seed derivation.
//!
//! Every pipeline stage draws its randomness from a seed derived from the
//! master seed and a purpose tag, so adding a stage never shifts the random
//! streams of the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used everywhere in the crate.
pub type Rng = ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// One splitmix64 output step applied to `state`.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(tag: &str) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for b in tag.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Child seed for `(master, tag)`.
pub fn derive(master: u64, tag: &str) -> u64 {
    splitmix64(splitmix64(master) ^ fnv1a(tag))
}

/// Child seed for `(master, tag, index)`, e.g. one per trial or fold.
pub fn derive_indexed(master: u64, tag: &str, index: u64) -> u64 {
    splitmix64(derive(master, tag) ^ splitmix64(index))
}

pub fn rng_from(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
