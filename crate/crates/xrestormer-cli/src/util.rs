//! Small shared helpers: stable hashing for derived seeds and config ids.

/// 64-bit FNV-1a. Stable across platforms and releases, unlike the standard
/// library's default hasher, so derived seeds and config ids never drift.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Per-image seed: the root seed and the image's manifest-relative path,
/// hashed together. Independent of processing order.
pub fn derived_seed(root_seed: u64, rel_path: &str) -> u64 {
    let mut bytes = root_seed.to_le_bytes().to_vec();
    bytes.extend_from_slice(rel_path.as_bytes());
    fnv1a64(&bytes)
}

pub fn hex64(v: u64) -> String {
    format!("{v:016x}")
}
