//! Seed derivation and the repo-wide random number generator.
//!
//! Every stochastic stage of the pipeline consumes an explicit `u64` seed.
//! A master seed is split into per-stage and per-client seeds with
//! [`derive_seed`] / [`derive_seed_indexed`], so the result of any stage is
//! independent of thread scheduling and of how many other stages ran before
//! it.
//!
//! The generator is ChaCha20 ([`rand_chacha::ChaCha20Rng`]) everywhere,
//! including the secure-aggregation mask streams: both endpoints of a
//! pairwise seed must expand it to the identical stream, so the algorithm is
//! fixed here once for the whole crate.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// The crate-wide seedable RNG.
pub type Rng = ChaCha20Rng;

/// Instantiate the crate RNG from a 64-bit seed.
pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// splitmix64 finalizer; good avalanche on sequential inputs.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a stage seed from a base seed and a stage tag.
///
/// The tag is folded in with FNV-1a and the result finalized with
/// splitmix64; the scheme is fixed and documented so reports can name the
/// exact seed of every stage.
pub fn derive_seed(base: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(base ^ h)
}

/// Derive a per-entity seed (client id, pair id, repetition index).
pub fn derive_seed_indexed(base: u64, tag: &str, index: u64) -> u64 {
    splitmix64(derive_seed(base, tag) ^ splitmix64(index))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::RngCore;

    #[test]
    fn derivation_is_deterministic_and_tag_sensitive() {
        assert_eq!(derive_seed(7, "partition"), derive_seed(7, "partition"));
        assert_ne!(derive_seed(7, "partition"), derive_seed(7, "dealer"));
        assert_ne!(derive_seed(7, "partition"), derive_seed(8, "partition"));
        assert_ne!(
            derive_seed_indexed(7, "client", 0),
            derive_seed_indexed(7, "client", 1)
        );
    }

    #[test]
    fn rng_streams_reproduce() {
        let mut a = rng_from_seed(123);
        let mut b = rng_from_seed(123);
        for _ in 0..16 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }
}
