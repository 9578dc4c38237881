//! Per-case seed derivation.
//!
//! Every random choice in the harness (candidate sampling, shuffle ordering,
//! test-case subsampling) draws from a ChaCha stream seeded by hashing the run
//! seed with the trajectory id and a purpose label. Results are therefore
//! reproducible regardless of evaluation order or worker count.

use sha2::{Digest, Sha256};

/// Derive a 64-bit sub-seed from the run seed, a trajectory id, and a label
/// separating independent uses of randomness for the same case.
pub fn subseed(seed: u64, trajectory_id: &str, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update([0u8]);
    hasher.update(trajectory_id.as_bytes());
    hasher.update([0u8]);
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}
