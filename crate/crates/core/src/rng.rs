//! Reproducible random streams.
//!
//! Every Monte Carlo path owns a ChaCha8 stream keyed by `(seed, domain,
//! index)`: the seed and a domain tag pick the key, the path index picks the
//! stream. Paths can therefore run on any number of workers in any order and
//! still see the same numbers. Per-path results are collected in index order
//! and reduced sequentially, so sums are bit-identical across thread counts.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

/// Domain tags keep unrelated consumers of one user seed apart.
pub mod domain {
    pub const KERNEL_FLOW: u64 = 0x6b65_726e;
    pub const SCENARIO: u64 = 0x7363_656e;
    pub const OBSERVATION: u64 = 0x6f62_7376;
    pub const VALUE_CHECK: u64 = 0x7661_6c75;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A user seed together with the index of one path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamId {
    pub seed: u64,
    pub index: u64,
}

impl StreamId {
    pub fn new(seed: u64, index: u64) -> Self {
        Self { seed, index }
    }

    pub fn rng(&self, domain: u64) -> ChaCha8Rng {
        stream(self.seed, domain, self.index)
    }
}

pub fn stream(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed ^ splitmix(domain)));
    rng.set_stream(index);
    rng
}

#[inline]
pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// `f(0), …, f(n−1)` evaluated in parallel, returned in index order.
pub fn par_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

/// Mean and standard error of a sample.
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}
