//! Seed derivation for reproducible random streams.
//!
//! Every stream is a ChaCha8 generator keyed by `(seed, purpose, index)`.
//! Regenerating one block or one replication never depends on how many
//! draws another consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(tag: &str) -> u64 {
    tag.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Deterministic 64-bit sub-seed for `(seed, purpose, index)`.
pub fn derive_seed(seed: u64, purpose: &str, index: u64) -> u64 {
    let a = splitmix64(seed ^ fnv1a(purpose));
    splitmix64(a ^ splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

pub fn stream(seed: u64, purpose: &str, index: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, purpose, index))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = (0..4).map(|_| 0).scan(stream(7, "x", 0), |r, _| Some(r.random())).collect();
        let b: Vec<u64> = (0..4).map(|_| 0).scan(stream(7, "x", 0), |r, _| Some(r.random())).collect();
        assert_eq!(a, b);
        assert_ne!(derive_seed(7, "x", 0), derive_seed(7, "x", 1));
        assert_ne!(derive_seed(7, "x", 0), derive_seed(7, "y", 0));
        assert_ne!(derive_seed(7, "x", 0), derive_seed(8, "x", 0));
    }
}
