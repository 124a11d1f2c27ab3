//! Deterministic seed derivation and random stream construction.
//!
//! Every randomized operation in the crate takes an explicit `u64` seed and
//! derives its stream with [`derive_seed`]. Independent purposes (data
//! sampling, weight init, attack noise, shuffling, Monte-Carlo chunks) use
//! distinct stream tags so that no two consumers ever share a stream, and
//! re-running with the same root seed is bit-identical.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags for [`derive_seed`]. Values are arbitrary but fixed.
pub mod stream {
    pub const DATA: u64 = 0x01;
    pub const SUBSAMPLE: u64 = 0x02;
    pub const BALANCE: u64 = 0x03;
    pub const INIT: u64 = 0x04;
    pub const SHUFFLE: u64 = 0x05;
    pub const ATTACK: u64 = 0x06;
    pub const EVAL: u64 = 0x07;
    pub const MC: u64 = 0x08;
    pub const EXPERIMENT: u64 = 0x09;
    pub const PERTURB: u64 = 0x0A;
}

/// One SplitMix64 mixing step.
#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Splitting rule: `seed' = sm(sm(sm(root) ^ stream) ^ index)` with `sm` the
/// SplitMix64 finalizer. Documented so external tools can reproduce streams.
#[inline]
pub fn derive_seed(root: u64, stream: u64, index: u64) -> u64 {
    splitmix(splitmix(splitmix(root) ^ stream) ^ index)
}

/// ChaCha8 stream for a derived seed.
pub fn rng_from(root: u64, stream: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, stream, index))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn derive_seed_is_deterministic_and_separates_streams() {
        assert_eq!(derive_seed(7, stream::DATA, 0), derive_seed(7, stream::DATA, 0));
        assert_ne!(derive_seed(7, stream::DATA, 0), derive_seed(7, stream::INIT, 0));
        assert_ne!(derive_seed(7, stream::DATA, 0), derive_seed(7, stream::DATA, 1));
        assert_ne!(derive_seed(7, stream::DATA, 0), derive_seed(8, stream::DATA, 0));
    }

    #[test]
    fn rng_streams_reproduce() {
        let mut a = rng_from(42, stream::ATTACK, 3);
        let mut b = rng_from(42, stream::ATTACK, 3);
        for _ in 0..32 {
            assert_eq!(a.gen::<u64>(), b.gen::<u64>());
        }
    }
}
