//! Per-stage seeds derived from one top-level seed.

use sha2::{Digest, Sha256};

/// Stable 64-bit seed for `stage`, independent of platform and build.
pub fn derive_seed(seed: u64, stage: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(stage.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stages_get_distinct_stable_seeds() {
        assert_eq!(derive_seed(42, "harvest"), derive_seed(42, "harvest"));
        assert_ne!(derive_seed(42, "harvest"), derive_seed(42, "split"));
        assert_ne!(derive_seed(42, "harvest"), derive_seed(43, "harvest"));
    }
}
