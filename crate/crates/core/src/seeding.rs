//! Deterministic derivation of independent random substreams.
//!
//! Harnesses derive one stream per (trial, client, ...) index path from a
//! single master seed, so results are reproducible bit-for-bit regardless of
//! execution order or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// SplitMix64 finalizer; a full-period mixer with good avalanche behavior.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix a master seed with an index path into a single derived seed.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    let mut state = splitmix64(master);
    for &component in path {
        state = splitmix64(state ^ splitmix64(component));
    }
    state
}

/// A fresh generator for the given index path under a master seed.
pub fn substream(master: u64, path: &[u64]) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(derive_seed(master, path))
}
