//! Seeded random streams.
//!
//! Every consumer draws from a ChaCha8 generator seeded with `seed` and
//! positioned on an explicit stream number, so independent units of work
//! (a simulated case, a dialogue turn) get reproducible, non-overlapping
//! randomness regardless of execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stable 64-bit FNV-1a hash, used to turn string keys into stream numbers.
pub fn key_hash(key: &str) -> u64 {
    use std::hash::Hasher;
    let mut h = fnv::FnvHasher::default();
    h.write(key.as_bytes());
    h.finish()
}
