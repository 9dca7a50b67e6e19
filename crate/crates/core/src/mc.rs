//! Reproducible Gaussian draws for Monte Carlo evaluation.
//!
//! Draw `i` lives in block `i / BLOCK_LEN` and is produced by a ChaCha8 stream keyed by
//! `(seed, block)`. Work is distributed by whole blocks, so every estimate is a pure
//! function of `(reps, seed)` no matter how many worker threads run it.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

pub const BLOCK_LEN: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McConfig {
    pub reps: usize,
    pub seed: u64,
}

impl McConfig {
    pub fn new(reps: usize, seed: u64) -> Self {
        Self { reps, seed }
    }
}

/// A Monte Carlo proportion with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub p: f64,
    pub se: f64,
    pub reps: usize,
    pub seed: u64,
}

impl McEstimate {
    pub fn from_count(count: u64, cfg: McConfig) -> Self {
        let p = count as f64 / cfg.reps as f64;
        Self { p, se: binomial_se(p, cfg.reps), reps: cfg.reps, seed: cfg.seed }
    }
}

pub fn binomial_se(p: f64, reps: usize) -> f64 {
    (p * (1.0 - p) / reps as f64).sqrt()
}

/// Generator for an independent stream `stream` under `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Standard-normal draws for one block: a `dim x len` matrix with one draw per column.
pub fn block_draws(seed: u64, block: usize, dim: usize, len: usize) -> DMatrix<f64> {
    let mut rng = stream_rng(seed, block as u64);
    DMatrix::from_fn(dim, len, |_, _| StandardNormal.sample(&mut rng))
}

/// Evaluates `f(first_index, draws)` on every block of `cfg.reps` draws of dimension
/// `dim` in parallel; results come back in block order.
pub fn par_blocks<T, F>(cfg: McConfig, dim: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, &DMatrix<f64>) -> T + Sync,
{
    let blocks = cfg.reps.div_ceil(BLOCK_LEN);
    (0..blocks)
        .into_par_iter()
        .map(|b| {
            let start = b * BLOCK_LEN;
            let len = BLOCK_LEN.min(cfg.reps - start);
            let draws = block_draws(cfg.seed, b, dim, len);
            f(start, &draws)
        })
        .collect()
}
