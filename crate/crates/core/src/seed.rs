//! Deterministic seed derivation and content hashing.
//!
//! One global seed is fanned out to components through a keyed hash, so
//! enabling or disabling one feature family never shifts the randomness
//! another family sees.

/// FNV-1a over a byte slice. Stable across platforms and releases.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seed for the component named `label`, derived from the global seed.
pub fn derive_seed(global: u64, label: &str) -> u64 {
    splitmix64(global ^ fnv1a64(label.as_bytes()))
}

/// Incremental FNV-1a hasher for fingerprints and dataset hashes.
#[derive(Debug, Clone)]
pub struct ContentHasher {
    state: u64,
}

impl ContentHasher {
    pub fn new() -> Self {
        ContentHasher {
            state: 0xcbf2_9ce4_8422_2325,
        }
    }

    pub fn update(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.state ^= b as u64;
            self.state = self.state.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub fn update_str(&mut self, s: &str) {
        self.update(s.as_bytes());
        // Separator byte so ("ab","c") and ("a","bc") hash differently.
        self.update(&[0x1f]);
    }

    pub fn update_u64(&mut self, v: u64) {
        self.update(&v.to_le_bytes());
    }

    pub fn finish(&self) -> u64 {
        splitmix64(self.state)
    }
}

impl Default for ContentHasher {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_are_stable_and_distinct() {
        let a = derive_seed(42, "lda:T=30");
        assert_eq!(a, derive_seed(42, "lda:T=30"));
        assert_ne!(a, derive_seed(42, "lda:T=40"));
        assert_ne!(a, derive_seed(43, "lda:T=30"));
    }

    #[test]
    fn hasher_separates_field_boundaries() {
        let mut h1 = ContentHasher::new();
        h1.update_str("ab");
        h1.update_str("c");
        let mut h2 = ContentHasher::new();
        h2.update_str("a");
        h2.update_str("bc");
        assert_ne!(h1.finish(), h2.finish());
    }
}
