//! Seeded random streams. Every stochastic step in the crate draws from a
//! ChaCha8 generator derived from a user seed and a fixed stream label, so
//! results do not depend on call order between unrelated components.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Generator for `seed` on a named stream.
pub fn stream(seed: u64, label: &str) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(label.as_bytes()));
    rng
}

/// Generator for `seed` on a stream keyed by both a label and an index.
pub fn indexed(seed: u64, label: &str, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(fnv1a(label.as_bytes()));
    rng
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn streams_are_independent_and_reproducible() {
        let a: u64 = stream(7, "init").gen();
        let b: u64 = stream(7, "init").gen();
        let c: u64 = stream(7, "shuffle").gen();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(indexed(7, "tree", 0).gen::<u64>(), indexed(7, "tree", 1).gen::<u64>());
    }
}
