//! Deterministic seed derivation.
//!
//! Every random quantity in a run is drawn from a ChaCha8 stream whose seed is
//! derived from the master seed, a purpose tag and an index (agent id, retry
//! counter, ...). Derivation is SplitMix64 applied to the master seed xor-ed
//! with an FNV-1a hash of the tag, then to the index. Sub-streams for distinct
//! `(tag, index)` pairs are therefore unrelated, and generating them in any
//! order yields the same values.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Derives a sub-seed for `(tag, index)` from `master`.
pub fn derive_seed(master: u64, tag: &str, index: u64) -> u64 {
    let base = splitmix64(master ^ fnv1a(tag));
    splitmix64(base ^ splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

/// A ChaCha8 generator seeded from `derive_seed(master, tag, index)`.
pub fn rng_for(master: u64, tag: &str, index: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(master, tag, index))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn derivation_is_stable_and_separates_tags() {
        assert_eq!(derive_seed(7, "stream", 3), derive_seed(7, "stream", 3));
        assert_ne!(derive_seed(7, "stream", 3), derive_seed(7, "stream", 4));
        assert_ne!(derive_seed(7, "stream", 3), derive_seed(7, "gate", 3));
        assert_ne!(derive_seed(7, "stream", 3), derive_seed(8, "stream", 3));
    }

    #[test]
    fn rng_streams_repeat() {
        let mut a = rng_for(1, "x", 0);
        let mut b = rng_for(1, "x", 0);
        for _ in 0..16 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }
}
