//! Deterministic RNG derivation.
//!
//! Every stochastic component derives its stream from (seed, purpose tag,
//! step, index). Streams are independent of thread scheduling, so training
//! with a rayon-parallel batch is bit-reproducible.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; good avalanche for combining stream labels.
fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Derive an independent RNG from a base seed and a label path.
pub fn derive(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    let mut acc = mix(seed ^ 0x6a09e667f3bcc908);
    for &p in parts {
        acc = mix(acc ^ p);
    }
    ChaCha8Rng::seed_from_u64(acc)
}

/// Stream tags for the fixed purposes used across the crate.
pub mod stream {
    pub const INIT: u64 = 1;
    pub const GUMBEL: u64 = 2;
    pub const DROPOUT: u64 = 3;
    pub const BATCH: u64 = 4;
    pub const SAMPLE: u64 = 5;
    pub const SYNTH: u64 = 6;
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_deterministic_and_distinct() {
        let a: f64 = derive(7, &[stream::GUMBEL, 3, 1]).random();
        let b: f64 = derive(7, &[stream::GUMBEL, 3, 1]).random();
        let c: f64 = derive(7, &[stream::GUMBEL, 3, 2]).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
