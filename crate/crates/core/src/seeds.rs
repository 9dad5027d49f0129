//! Deterministic seed derivation.
//!
//! Every random decision in the pipeline is keyed by a path of string
//! labels under a single master seed. Distinct paths give statistically
//! independent streams, so the seeds used for attack generation, metric
//! repetitions, and robustness installations never collide even when the
//! counts change.

use sha2::{Digest, Sha256};

/// Derive a child seed from `seed` and a label path.
///
/// The derivation hashes the parent seed together with the `/`-joined path,
/// so `derive(s, &["a", "b"])` and `derive(derive(s, &["a"]), &["b"])` are
/// distinct, stable values.
pub fn derive(seed: u64, path: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    for part in path {
        hasher.update([0x1f]); // unit separator, keeps ["ab"] != ["a","b"]
        hasher.update(part.as_bytes());
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

/// Derive an indexed child seed, e.g. one per installation or repetition.
pub fn derive_indexed(seed: u64, path: &[&str], index: usize) -> u64 {
    let idx = index.to_string();
    let mut full: Vec<&str> = path.to_vec();
    full.push(&idx);
    derive(seed, &full)
}
