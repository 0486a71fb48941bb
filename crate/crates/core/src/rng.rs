//! Seedable randomness: one named algorithm, explicit seeds everywhere.
//!
//! All stochastic operations draw from ChaCha8 streams. Independent streams
//! for sub-tasks (per frame, per camera, per training step) are derived by
//! hashing the base seed with a domain label and an index, so adding or
//! reordering *later* consumers never perturbs earlier draws.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// The generator used throughout the crate.
pub type Rng = ChaCha8Rng;

/// Creates the generator for `seed`.
pub fn rng_from(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent seed from a base seed, a domain label, and an
/// index. SHA-256 based: collisions between (domain, index) pairs are not a
/// practical concern, and the derivation is stable across platforms.
pub fn derive_seed(base: u64, domain: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update([0xff]);
    h.update(domain.as_bytes());
    h.update([0xfe]);
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}
