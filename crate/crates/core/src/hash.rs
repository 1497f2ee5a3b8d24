//! Platform-stable seeded hashing used for feature hashing, seed derivation
//! and hash-driven sampling.

use xxhash_rust::xxh3::xxh3_64_with_seed;

pub fn hash_bytes(seed: u64, bytes: &[u8]) -> u64 {
    xxh3_64_with_seed(bytes, seed)
}

pub fn hash_str(seed: u64, s: &str) -> u64 {
    hash_bytes(seed, s.as_bytes())
}

/// Hashes a sequence of integers under `seed`.
pub fn hash_u64s(seed: u64, parts: &[u64]) -> u64 {
    let mut buf = Vec::with_capacity(parts.len() * 8);
    for p in parts {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    hash_bytes(seed, &buf)
}

/// Maps a hash to a uniform float in `[0, 1)` using its top 53 bits.
pub fn unit_f64(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Child seed derivation: hash(parent seed, stage tag, parent id, ordinal).
pub fn derive_seed(parent_seed: u64, stage: &str, parent_id: u64, ordinal: u64) -> u64 {
    let tag = hash_str(0, stage);
    hash_u64s(parent_seed, &[tag, parent_id, ordinal])
}
