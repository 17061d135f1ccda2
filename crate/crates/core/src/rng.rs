//! Seeded random streams.
//!
//! Every stochastic operation takes an explicit [`RngStream`]. A stream is
//! identified by `(seed, stream_id)`; ChaCha's native stream counter keeps
//! distinct ids independent, so work can be split across samples or threads
//! without the result depending on scheduling order.

use rand::distr::{Distribution, Open01, StandardUniform};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct RngStream {
    inner: ChaCha8Rng,
    seed: u64,
    stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        Self {
            inner,
            seed,
            stream_id,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Stream for a labelled sub-task, keyed by a path of integers.
    ///
    /// The key is mixed into a fresh seed so that e.g. `(epoch, sample, view)`
    /// triples map to unrelated streams.
    pub fn derive(seed: u64, key: &[u64]) -> Self {
        let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
        for &k in key {
            h = splitmix64(h ^ splitmix64(k.wrapping_add(0x632b_e59b_d9b4_e019)));
        }
        Self::new(h, key.first().copied().unwrap_or(0))
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        StandardUniform.sample(&mut self.inner)
    }

    /// Uniform on the open interval `(0, 1)`.
    pub fn uniform_open(&mut self) -> f64 {
        Open01.sample(&mut self.inner)
    }

    /// Uniform on `[lo, hi]`; returns `lo` when the range is degenerate.
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            // still consume a draw so stream positions do not depend on cfg values
            let _ = self.uniform();
            return lo;
        }
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `lo..=hi`.
    pub fn int_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        if hi <= lo {
            let _ = self.inner.next_u64();
            return lo;
        }
        self.inner.random_range(lo..=hi)
    }

    /// Bernoulli draw; always consumes exactly one uniform.
    pub fn chance(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.inner.random_range(0..=i);
            items.swap(i, j);
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
