//! Deterministic sub-seed derivation.

use sha2::{Digest, Sha256};

/// Derives an independent 64-bit seed for `label` from a root seed.
pub fn derive(root: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(label.as_bytes());
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("8 bytes"))
}
