//! Deterministic random streams.
//!
//! Every random draw in the crate comes from [`Rng`], a ChaCha8 generator keyed by a
//! 64-bit seed and a 64-bit stream id. ChaCha8 output is specified bit-for-bit, so a
//! given `(seed, stream)` pair yields the same sequence on every platform. Float draws
//! go through `rand_distr`, whose sampling code is pure integer/IEEE arithmetic.
//!
//! Independent substreams are derived with [`Rng::split`], which hashes the parent
//! key together with a caller-chosen tag. Training code derives one stream per
//! purpose and epoch (shuffle, dropout, augmentation) instead of threading a single
//! generator through the loop, which makes resumption from a checkpoint exact.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Rng { seed, stream, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Child stream determined only by this stream's key and `tag`, not by how many
    /// values have been drawn from `self`.
    pub fn split(&self, tag: u64) -> Rng {
        let child_seed = splitmix64(self.seed ^ splitmix64(self.stream.wrapping_add(0x5851_f42d)));
        Rng::with_stream(child_seed, tag)
    }

    /// Shorthand for a chain of splits.
    pub fn split_path(&self, tags: &[u64]) -> Rng {
        tags.iter().fold(self.clone(), |r, &t| r.split(t))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform in `[lo, hi)`; returns `lo` when the range is empty.
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return lo;
        }
        Uniform::new(lo, hi).expect("finite range").sample(&mut self.inner)
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        Normal::new(mean, std).expect("non-negative std").sample(&mut self.inner)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Uniform index in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
