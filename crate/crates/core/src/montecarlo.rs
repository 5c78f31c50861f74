//! Deterministic parallel trial loops.
//!
//! Trials are split into fixed-size blocks that run in parallel; block results
//! come back in block order and are folded sequentially, so floating-point sums
//! do not depend on the thread count. Trial `i` seeds its own randomness from
//! `(root, Trial, i)`, which makes results independent of the block size too.

use rayon::prelude::*;

use crate::rng::{stream_seed, Stream};

pub const BLOCK: usize = 1024;

/// Seed of trial `index` under `root`.
pub fn trial_seed(root: u64, index: usize) -> u64 {
    stream_seed(root, Stream::Trial, &[index as u64])
}

/// Runs `block_fn(start..end)` over consecutive blocks of `trials` in parallel
/// and returns the block results in order.
pub fn run_blocks<A, F>(trials: usize, block_fn: F) -> Vec<A>
where
    A: Send,
    F: Fn(std::ops::Range<usize>) -> A + Sync,
{
    let blocks = trials.div_ceil(BLOCK);
    (0..blocks)
        .into_par_iter()
        .map(|b| {
            let start = b * BLOCK;
            block_fn(start..(start + BLOCK).min(trials))
        })
        .collect()
}

/// Running first and second moments of a vector-valued sample.
#[derive(Debug, Clone, PartialEq)]
pub struct VecMoments {
    pub count: usize,
    pub sum: Vec<f64>,
    pub sum_sq: Vec<f64>,
}

impl VecMoments {
    pub fn new(dim: usize) -> Self {
        VecMoments { count: 0, sum: vec![0.0; dim], sum_sq: vec![0.0; dim] }
    }

    pub fn push(&mut self, x: &[f64]) {
        self.count += 1;
        for ((s, q), v) in self.sum.iter_mut().zip(&mut self.sum_sq).zip(x) {
            *s += v;
            *q += v * v;
        }
    }

    pub fn merge(&mut self, other: &VecMoments) {
        self.count += other.count;
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            *a += b;
        }
        for (a, b) in self.sum_sq.iter_mut().zip(&other.sum_sq) {
            *a += b;
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        self.sum.iter().map(|s| s / self.count as f64).collect()
    }

    pub fn variance(&self) -> Vec<f64> {
        let n = self.count as f64;
        self.sum
            .iter()
            .zip(&self.sum_sq)
            .map(|(s, q)| (q - s * s / n) / (n - 1.0))
            .collect()
    }
}
