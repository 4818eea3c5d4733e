use sha2::{Digest, Sha256};

/// Platform-independent 64-bit hash of a label and index.
pub fn stable_hash(label: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(label.as_bytes());
    h.update([0u8]);
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 is 32 bytes"))
}

/// `base + stable_hash(label, index)`, wrapping.
pub fn derive_seed(base: u64, label: &str, index: u64) -> u64 {
    base.wrapping_add(stable_hash(label, index))
}

/// Hex SHA-256 of a byte string.
pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
