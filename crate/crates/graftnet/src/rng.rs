//! Seeding helpers. Every random draw in the crate flows through a
//! `ChaCha8Rng` built here, so trajectories are reproducible across
//! platforms and thread schedules.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic RNG from a bare seed.
pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mixes a base seed with a stream index (epoch, network id, ...) into a new
/// seed. splitmix64 finalizer; consecutive streams decorrelate fully.
pub fn mix_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_seed_same_stream() {
        let a: Vec<u32> = (0..8).map(|_| rng_from(42).random()).collect();
        let b: Vec<u32> = (0..8).map(|_| rng_from(42).random()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn mixed_streams_differ() {
        let s0 = mix_seed(7, 0);
        let s1 = mix_seed(7, 1);
        let s2 = mix_seed(8, 0);
        assert_ne!(s0, s1);
        assert_ne!(s0, s2);
        assert_ne!(s1, s2);
    }

    #[test]
    fn mix_is_stable() {
        // Frozen values: changing the mixer would silently re-seed every
        // reproducible trajectory in the crate.
        assert_eq!(mix_seed(0, 0), 0);
        assert_eq!(mix_seed(42, 3), mix_seed(42, 3));
    }
}
