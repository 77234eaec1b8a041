//! Seed derivation. Every shuffle and random draw in the crate gets its own
//! ChaCha stream keyed by a master seed plus a structural path, so results do
//! not depend on iteration order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a master seed with a path of identifiers into a sub-seed.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    let mut h = splitmix(master.wrapping_add(GOLDEN));
    for &p in path {
        h = splitmix(h ^ p.wrapping_mul(GOLDEN).wrapping_add(0x632B_E59B_D9B4_E019));
    }
    h
}

pub fn stream(master: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, path))
}
