//! Stable hashing used to derive seeds and pseudo-random values from names.

use sha2::{Digest, Sha256};

/// SHA-256 over length-prefixed parts; the first eight digest bytes as a
/// big-endian integer.
pub fn derive_u64(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_be_bytes());
        h.update(p);
    }
    let digest = h.finalize();
    u64::from_be_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

/// Maps a hash to [0, 1).
pub fn unit_interval(x: u64) -> f64 {
    (x >> 11) as f64 / (1u64 << 53) as f64
}

/// Per-record seed from a global seed and the record id; independent of the
/// order in which records are processed.
pub fn record_seed(global_seed: u64, record_id: &str) -> u64 {
    derive_u64(&[b"record-seed", &global_seed.to_be_bytes(), record_id.as_bytes()])
}
