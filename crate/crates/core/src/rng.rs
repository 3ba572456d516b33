//! Seeded random streams.
//!
//! Every randomized operation takes a [`SeededRng`] from its caller. Child
//! streams for parallel work come from [`SeededRng::split`], which depends
//! only on the root seed and the stream id, never on how much of the parent
//! has been consumed.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream `stream` of this generator's root seed.
    pub fn split(&self, stream: u64) -> Self {
        let seed = splitmix64(self.seed ^ splitmix64(stream.wrapping_add(0x5EED)));
        Self::new(seed)
    }

    /// Uniform integer in `[0, n)`. `n` must be nonzero.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        self.inner.random_range(0..n)
    }

    /// Uniform real in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    /// Moves a uniform random `k`-subset of `items` into its first `k` slots
    /// (partial Fisher-Yates) and returns that prefix.
    pub fn partial_shuffle<'a, T>(&mut self, items: &'a mut [T], k: usize) -> &'a mut [T] {
        let k = k.min(items.len());
        for i in 0..k {
            let j = i + self.below(items.len() - i);
            items.swap(i, j);
        }
        &mut items[..k]
    }
}

impl SeededRng {
    /// `min(k, len)` distinct indices from `[0, len)`, uniform without replacement.
    pub fn sample_indices(&mut self, len: usize, k: usize) -> Vec<usize> {
        rand::seq::index::sample(&mut self.inner, len, k.min(len)).into_vec()
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Deterministic stream constructor; same seed, same stream.
pub fn seeded_rng(seed: u64) -> SeededRng {
    SeededRng::new(seed)
}

/// SplitMix64 finalizer. Used as a stateless hash for seed derivation and
/// per-point reservoir priorities.
#[inline]
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = seeded_rng(7);
        let mut b = seeded_rng(7);
        let xs: Vec<usize> = (0..100).map(|_| a.below(1000)).collect();
        let ys: Vec<usize> = (0..100).map(|_| b.below(1000)).collect();
        assert_eq!(xs, ys);
    }

    #[test]
    fn different_seeds_differ() {
        let mut a = seeded_rng(7);
        let mut b = seeded_rng(8);
        let xs: Vec<u64> = (0..16).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..16).map(|_| b.next_u64()).collect();
        assert_ne!(xs, ys);
    }

    #[test]
    fn shuffle_is_permutation() {
        let mut v: Vec<usize> = (0..10).collect();
        seeded_rng(7).shuffle(&mut v);
        let mut sorted = v.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn split_ignores_parent_consumption() {
        let a = seeded_rng(3);
        let mut b = seeded_rng(3);
        b.next_u64();
        assert_eq!(a.split(5).next_u64(), b.split(5).next_u64());
        assert_ne!(a.split(5).next_u64(), a.split(6).next_u64());
    }
}
