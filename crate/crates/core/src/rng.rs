//! Deterministic random streams.
//!
//! Every stochastic operation draws from a ChaCha20 stream whose 32-byte key
//! is `SHA-256("specbias.stream.v1" || seed || path[0] || path[1] || ...)`,
//! all integers encoded as little-endian `u64`. The path names the consumer
//! (epoch index, trial index, fold index, ...), so any epoch or fold can be
//! regenerated on its own and results do not depend on iteration order or
//! thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

const DOMAIN: &[u8] = b"specbias.stream.v1";

/// Stream tags used as the first path element, keeping consumers that share a
/// seed apart.
pub mod tag {
    pub const EPOCH: u64 = 1;
    pub const NOISE: u64 = 2;
    pub const SOURCE: u64 = 3;
    pub const MASK: u64 = 4;
    pub const SHUFFLE: u64 = 5;
    pub const INIT: u64 = 6;
    pub const FOLD: u64 = 7;
    pub const PROBE: u64 = 8;
    pub const CORPUS: u64 = 9;
}

fn key(seed: u64, path: &[u64]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(DOMAIN);
    h.update(seed.to_le_bytes());
    for p in path {
        h.update(p.to_le_bytes());
    }
    h.finalize().into()
}

/// A ChaCha20 generator keyed by `(seed, path)`.
pub fn stream(seed: u64, path: &[u64]) -> ChaCha20Rng {
    ChaCha20Rng::from_seed(key(seed, path))
}

/// A 64-bit sub-seed derived from `(seed, path)`; `stream(sub_seed(s, p), &[])`
/// is the canonical way to hand one consumer its own reproducible seed.
pub fn sub_seed(seed: u64, path: &[u64]) -> u64 {
    let k = key(seed, path);
    u64::from_le_bytes(k[..8].try_into().expect("8 bytes"))
}

/// Fisher-Yates shuffle of `0..n` driven by `rng`.
pub fn permutation(n: usize, rng: &mut impl rand::Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = (0..4).map(|_| stream(7, &[1, 2]).random()).collect();
        assert!(a.windows(2).all(|w| w[0] == w[1]));
        let x: u64 = stream(7, &[1, 2]).random();
        let y: u64 = stream(7, &[1, 3]).random();
        let z: u64 = stream(8, &[1, 2]).random();
        assert_ne!(x, y);
        assert_ne!(x, z);
    }

    #[test]
    fn path_is_not_concatenation_ambiguous() {
        assert_ne!(sub_seed(1, &[2]), sub_seed(1, &[2, 0]));
    }

    #[test]
    fn permutation_is_a_permutation() {
        let mut rng = stream(3, &[]);
        let mut p = permutation(100, &mut rng);
        p.sort_unstable();
        assert_eq!(p, (0..100).collect::<Vec<_>>());
    }
}
