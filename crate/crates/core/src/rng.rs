//! Seed derivation shared by every randomized component.
//!
//! All generators are ChaCha8 streams. A child seed is obtained by selecting
//! stream `key` of the generator seeded with the parent seed and reading its
//! first word, so derived seeds depend only on `(parent, key)` and never on
//! the order in which work is scheduled.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn generator(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Generator for stream `key` under `seed`.
pub fn stream(seed: u64, key: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(key);
    rng
}

pub fn derive_seed(seed: u64, key: u64) -> u64 {
    stream(seed, key).next_u64()
}
