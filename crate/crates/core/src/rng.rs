//! Named, salted random sub-streams derived from a single scenario seed.
//!
//! Every consumer of randomness (partitioning, training shuffles, client
//! selection, dropout, network sampling, masking) draws from its own stream
//! keyed by a label and a list of salts, so the draws of one consumer never
//! depend on how many values another consumer has taken.

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

/// Derive the stream `label` salted with `salts` from `seed`.
pub fn stream(seed: u64, label: &str, salts: &[u64]) -> StreamRng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((label.len() as u64).to_le_bytes());
    hasher.update(label.as_bytes());
    for salt in salts {
        hasher.update(salt.to_le_bytes());
    }
    let digest: [u8; 32] = hasher.finalize().into();
    ChaCha8Rng::from_seed(digest)
}

/// Stable 64-bit salt for a string identifier.
pub fn salt_str(id: &str) -> u64 {
    let digest = Sha256::digest(id.as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}
