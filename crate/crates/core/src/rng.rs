//! The one pseudo-random generator used across the crate.
//!
//! `ChaCha8Rng` is a counter-based stream cipher generator with a
//! platform-independent output stream, so a seed reproduces the same
//! datasets, initializations and shuffles everywhere.

use rand::SeedableRng;

pub type Prng = rand_chacha::ChaCha8Rng;

pub fn seeded(seed: u64) -> Prng {
    Prng::seed_from_u64(seed)
}

/// Derives an independent child seed, so sub-tasks (per-domain training,
/// per-split sampling) do not share a stream.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
