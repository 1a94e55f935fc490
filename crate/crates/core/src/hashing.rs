//! 64-bit FNV-1a hashing used for trigram bucketing, prompt digests, and
//! per-item seed derivation. Kept dependency-free so hashes are stable
//! across platforms and releases.

/// FNV-1a offset basis (64-bit).
pub const FNV_OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
/// FNV-1a prime (64-bit).
pub const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a over `bytes` starting from the standard offset basis.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    fnv1a64_seeded(FNV_OFFSET_BASIS, bytes)
}

/// FNV-1a over `bytes` starting from an arbitrary initial state.
pub fn fnv1a64_seeded(state: u64, bytes: &[u8]) -> u64 {
    let mut h = state;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Derives a per-item RNG seed from a base seed and a string id.
pub fn derive_seed(base: u64, id: &str) -> u64 {
    base ^ fnv1a64(id.as_bytes())
}
