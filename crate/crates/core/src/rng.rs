//! Named deterministic random streams.
//!
//! A single run seed fans out into independent streams ("init", "shuffle",
//! "data-gen", ...) so that, e.g., changing the number of training epochs
//! cannot perturb data generation. Stream selection hashes the name with
//! FNV-1a; the result feeds ChaCha's stream counter.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Deterministic RNG for `(seed, name)`. Distinct names give statistically
/// independent streams of the same ChaCha20 instance family.
pub fn named_stream(seed: u64, name: &str) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(name.as_bytes()));
    rng
}
