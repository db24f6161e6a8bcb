//! Stable hashing helpers shared by the corpus store and the pipeline cache.

use sha2::{Digest, Sha256};

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// SHA-256 over length-prefixed parts, so `["ab", "c"]` and `["a", "bc"]` differ.
pub fn sha256_parts<I, P>(parts: I) -> String
where
    I: IntoIterator<Item = P>,
    P: AsRef<[u8]>,
{
    let mut hasher = Sha256::new();
    for part in parts {
        let part = part.as_ref();
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    hex::encode(hasher.finalize())
}

/// A 64-bit value derived from the parts. Platform and release independent,
/// unlike `std::hash`.
pub fn stable_u64<I, P>(parts: I) -> u64
where
    I: IntoIterator<Item = P>,
    P: AsRef<[u8]>,
{
    let mut hasher = Sha256::new();
    for part in parts {
        let part = part.as_ref();
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    let out = hasher.finalize();
    let mut word = [0u8; 8];
    word.copy_from_slice(&out[..8]);
    u64::from_le_bytes(word)
}

/// Uniform value in `[0, 1)` derived from the parts.
pub fn stable_unit<I, P>(parts: I) -> f64
where
    I: IntoIterator<Item = P>,
    P: AsRef<[u8]>,
{
    (stable_u64(parts) >> 11) as f64 / (1u64 << 53) as f64
}
