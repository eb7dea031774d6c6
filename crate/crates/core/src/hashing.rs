//! Stable content hashes used for prompt ids and seed derivation.

use sha2::{Digest, Sha256};

/// Stable 64-bit hash over an ordered list of byte strings.
///
/// Each part is length-prefixed so `("ab", "c")` and `("a", "bc")` differ.
pub fn hash64(parts: &[&[u8]]) -> u64 {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Generation seed for a sample at an epoch: `hash64(run_seed, sample_id, epoch)`.
pub fn derive_seed(run_seed: u64, key: &str, epoch: u32) -> u64 {
    hash64(&[&run_seed.to_le_bytes(), key.as_bytes(), &epoch.to_le_bytes()])
}

/// Full SHA-256 digest as lowercase hex.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hex content id (first 16 hex digits of SHA-256).
pub fn content_id(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    hex::encode(&digest[..8])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn length_prefix_separates_parts() {
        assert_ne!(hash64(&[b"ab", b"c"]), hash64(&[b"a", b"bc"]));
    }

    #[test]
    fn seeds_differ_by_epoch_and_sample() {
        let a = derive_seed(7, "s1", 1);
        assert_eq!(a, derive_seed(7, "s1", 1));
        assert_ne!(a, derive_seed(7, "s1", 2));
        assert_ne!(a, derive_seed(7, "s2", 1));
        assert_ne!(a, derive_seed(8, "s1", 1));
    }

    #[test]
    fn content_id_is_16_hex() {
        let id = content_id("a dog runs");
        assert_eq!(id.len(), 16);
        assert!(id.chars().all(|c| c.is_ascii_hexdigit()));
        assert_eq!(id, content_id("a dog runs"));
    }
}
