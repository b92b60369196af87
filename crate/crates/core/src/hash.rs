//! Stable 64-bit hashing for seeded, platform-independent derivations.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a over raw bytes.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// FNV-1a over the UTF-8 key followed by the seed's 8 little-endian bytes.
pub fn seeded_key_hash(seed: u64, key: &str) -> u64 {
    let mut buf = Vec::with_capacity(key.len() + 8);
    buf.extend_from_slice(key.as_bytes());
    buf.extend_from_slice(&seed.to_le_bytes());
    fnv1a64(&buf)
}
