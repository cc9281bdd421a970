//! Seed plumbing. Every random draw in the crate comes from a ChaCha8 stream
//! keyed by the run seed and a stream id derived from the call site, so
//! results do not depend on call order across components or on the platform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream tags for the subsystems that draw randomness.
pub mod tag {
    pub const WORLD: u64 = 1;
    pub const EPISODE: u64 = 2;
    pub const INSTRUCTION: u64 = 3;
    pub const SUITE: u64 = 4;
    pub const LANDMARK_INIT: u64 = 5;
    pub const PARAM_INIT: u64 = 6;
    pub const IMITATION: u64 = 7;
    pub const REINFORCE: u64 = 8;
    pub const ROLLOUT: u64 = 9;
    pub const BENCHMARK: u64 = 10;
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Folds a list of integers into one stream id.
pub fn stream_id(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x5eed_u64, |acc, &p| splitmix(acc ^ splitmix(p)))
}

/// Deterministic generator for `seed` on the stream named by `parts`.
pub fn stream(seed: u64, parts: &[u64]) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(parts));
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: u64 = stream(7, &[tag::WORLD]).gen();
        let b: u64 = stream(7, &[tag::WORLD]).gen();
        let c: u64 = stream(7, &[tag::EPISODE]).gen();
        let d: u64 = stream(8, &[tag::WORLD]).gen();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn stream_id_depends_on_order() {
        assert_ne!(stream_id(&[1, 2]), stream_id(&[2, 1]));
    }
}
