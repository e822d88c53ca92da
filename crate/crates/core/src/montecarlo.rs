//! Seeded sampling of `(S1, Y)` and estimation of the shareholder objective
//! `E[X+]`, the survival probability, and the discontinuous sensitivity
//! `psi(0)`.
//!
//! Draws are generated in fixed chunks of 2^16 paths. Each chunk owns a
//! ChaCha8 stream seeded as `hash(seed, chunk_index)`, so generation is
//! deterministic and order-independent: chunks can be produced on any worker
//! in any order and the batch is still bit-identical. All reductions walk the
//! chunks in index order for the same reason.
//!
//! The `psi(0)` estimator differences the default indicator at `q = +-h`
//! under common random numbers and Richardson-extrapolates over the `h` grid;
//! the naive estimator has `O(1/h)` variance, CRN confines it to the boundary
//! shell.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{KvaError, Result};
use crate::model::{CapitalConstraint, EquityEvaluator, ValidatedModel};

/// Paths per generation chunk. Even, so antithetic pairs never straddle
/// a chunk boundary.
pub(crate) const CHUNK: usize = 1 << 16;

/// A realized batch of joint draws of `(S1, Y)`.
///
/// Regenerating with the same `(seed, n, model, antithetic)` reproduces the
/// draws bit-exactly. Antithetic batches store each Gaussian increment `z`
/// followed immediately by its mirror `-z`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    n: usize,
    d: usize,
    seed: u64,
    antithetic: bool,
    /// Row-major `n x d` asset draws.
    s1: Vec<f64>,
    y: Vec<f64>,
}

impl SampleBatch {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn antithetic(&self) -> bool {
        self.antithetic
    }

    pub fn s1_row(&self, i: usize) -> &[f64] {
        &self.s1[i * self.d..(i + 1) * self.d]
    }

    pub fn y(&self, i: usize) -> f64 {
        self.y[i]
    }

    pub(crate) fn y_flat(&self) -> &[f64] {
        &self.y
    }

    pub(crate) fn s1_flat(&self) -> &[f64] {
        &self.s1
    }
}

/// A Monte Carlo point estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    /// Sample standard deviation over sqrt(n); exactly zero for a batch of
    /// identical values.
    pub stderr: f64,
    pub n: usize,
}

/// splitmix64 finalizer; full-avalanche mix for deriving chunk seeds.
fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

fn chunk_seed(seed: u64, chunk_index: u64) -> u64 {
    mix64(seed ^ mix64(chunk_index.wrapping_add(1)))
}

pub(crate) fn chunk_bounds(n: usize) -> Vec<(usize, usize)> {
    (0..n.div_ceil(CHUNK)).map(|c| (c * CHUNK, ((c + 1) * CHUNK).min(n))).collect()
}

/// Draws `n` joint samples of `(S1, Y)` under the model law.
///
/// With `antithetic` set, draws come in `(z, -z)` pairs and `n` must be even
/// so every pair is complete.
pub fn sample(model: &ValidatedModel, n: usize, seed: u64, antithetic: bool) -> Result<SampleBatch> {
    if n < 2 {
        return Err(KvaError::InvalidParameter("sample size must be at least 2"));
    }
    if antithetic && n % 2 != 0 {
        return Err(KvaError::InvalidParameter("antithetic sampling requires an even sample size"));
    }
    let d = model.d();
    let mut s1 = vec![0.0; n * d];
    let mut y = vec![0.0; n];

    s1.par_chunks_mut(CHUNK * d)
        .zip(y.par_chunks_mut(CHUNK))
        .enumerate()
        .for_each(|(c, (s1_chunk, y_chunk))| {
            fill_chunk(model, chunk_seed(seed, c as u64), antithetic, s1_chunk, y_chunk);
        });

    Ok(SampleBatch { n, d, seed, antithetic, s1, y })
}

fn fill_chunk(
    model: &ValidatedModel,
    chunk_seed: u64,
    antithetic: bool,
    s1_chunk: &mut [f64],
    y_chunk: &mut [f64],
) {
    let d = model.d();
    let l = model.chol_full();
    let m1 = &model.market().m1;
    let m_y = model.market().m_y;
    let mut rng = ChaCha8Rng::seed_from_u64(chunk_seed);
    let mut z = vec![0.0; d + 1];
    let mut v = vec![0.0; d + 1];
    let len = y_chunk.len();

    let write = |i: usize, v: &[f64], sign: f64, s1_chunk: &mut [f64], y_chunk: &mut [f64]| {
        for k in 0..d {
            s1_chunk[i * d + k] = m1[k] + sign * v[k];
        }
        y_chunk[i] = m_y + sign * v[d];
    };

    let mut i = 0;
    while i < len {
        for zk in z.iter_mut() {
            *zk = StandardNormal.sample(&mut rng);
        }
        for row in 0..=d {
            let mut acc = 0.0;
            for col in 0..=row {
                acc += l[(row, col)] * z[col];
            }
            v[row] = acc;
        }
        write(i, &v, 1.0, s1_chunk, y_chunk);
        i += 1;
        if antithetic && i < len {
            write(i, &v, -1.0, s1_chunk, y_chunk);
            i += 1;
        }
    }
}

/// Welford accumulator with Chan's pairwise merge, so chunked accumulation
/// in a fixed order yields deterministic mean and variance.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct RunningStats {
    n: u64,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub(crate) fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub(crate) fn merge(&mut self, other: &RunningStats) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        self.mean += d * other.n as f64 / n as f64;
        self.m2 += other.m2 + d * d * (self.n as f64 * other.n as f64) / n as f64;
        self.n = n;
    }

    pub(crate) fn estimate(&self) -> Estimate {
        let stderr = if self.n >= 2 {
            (self.m2 / (self.n as f64 - 1.0) / self.n as f64).sqrt()
        } else {
            0.0
        };
        Estimate { value: self.mean, stderr, n: self.n as usize }
    }
}

/// Runs `per_draw` over the batch, accumulating `k` statistics per draw.
/// Chunks evaluate in parallel; merging is sequential in chunk order.
pub(crate) fn chunk_stats<F>(batch: &SampleBatch, k: usize, per_draw: F) -> Vec<RunningStats>
where
    F: Fn(&[f64], f64, &mut [f64]) + Sync,
{
    let d = batch.d;
    let per_chunk: Vec<Vec<RunningStats>> = chunk_bounds(batch.n)
        .par_iter()
        .map(|&(start, end)| {
            let mut stats = vec![RunningStats::default(); k];
            let mut vals = vec![0.0; k];
            for i in start..end {
                per_draw(&batch.s1[i * d..(i + 1) * d], batch.y[i], &mut vals);
                for (s, v) in stats.iter_mut().zip(&vals) {
                    s.push(*v);
                }
            }
            stats
        })
        .collect();

    let mut total = vec![RunningStats::default(); k];
    for chunk in &per_chunk {
        for (t, c) in total.iter_mut().zip(chunk) {
            t.merge(c);
        }
    }
    total
}

/// Estimates `E[max(X, 0)]`, the limited-liability value of equity.
pub fn positive_part_value(ev: &EquityEvaluator, batch: &SampleBatch) -> Result<Estimate> {
    if ev.theta().len() != batch.d {
        return Err(KvaError::DimensionMismatch { expected: ev.theta().len(), actual: batch.d });
    }
    let stats = chunk_stats(batch, 1, |s1, y, out| {
        out[0] = ev.value_raw(s1, y).max(0.0);
    });
    Ok(stats[0].estimate())
}

/// Estimates `P[X > 0]`, the probability of the no-default event.
pub fn survival_probability(ev: &EquityEvaluator, batch: &SampleBatch) -> Result<Estimate> {
    if ev.theta().len() != batch.d {
        return Err(KvaError::DimensionMismatch { expected: ev.theta().len(), actual: batch.d });
    }
    let stats = chunk_stats(batch, 1, |s1, y, out| {
        out[0] = if ev.value_raw(s1, y) > 0.0 { 1.0 } else { 0.0 };
    });
    Ok(stats[0].estimate())
}

/// Estimates the boundary sensitivity
/// `psi(0) = lim_{h->0} E[Y (1_{X(h)>0} - 1_{X(0)>0}) / h]`
/// at the zero-quantity optimum.
///
/// Perturbing the position to `q = +-h` moves equity to
/// `X +- h (y + price0_slope * (1+r+lambda))` on the same draw, so the
/// indicators share all randomness and only boundary-shell draws contribute.
/// Each adjacent pair of the decreasing `h_grid` is Richardson-combined draw
/// by draw to cancel the `O(h^2)` central-difference bias; the deepest pair
/// is returned. All extrapolants must agree with the returned one within
/// five combined standard errors.
pub fn estimate_psi0(
    model: &ValidatedModel,
    constraint: &CapitalConstraint,
    theta_star: &DVector<f64>,
    price0_slope: f64,
    batch: &SampleBatch,
    h_grid: &[f64],
) -> Result<Estimate> {
    if h_grid.is_empty() {
        return Err(KvaError::InvalidParameter("h_grid must be nonempty"));
    }
    if h_grid.iter().any(|&h| !(h > 0.0)) {
        return Err(KvaError::InvalidParameter("h_grid entries must be positive"));
    }
    if h_grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(KvaError::InvalidParameter("h_grid must be strictly decreasing"));
    }

    let ev = EquityEvaluator::new(model, constraint, theta_star.clone(), 0.0, 0.0)?;
    if batch.d != model.d() {
        return Err(KvaError::DimensionMismatch { expected: model.d(), actual: batch.d });
    }

    let m = h_grid.len();
    let k = 2 * m - 1;
    let accrual = model.accrual();
    let inv2h: Vec<f64> = h_grid.iter().map(|h| 0.5 / h).collect();
    // combo_j = alpha_j * g(h_{j+1}) + (1 - alpha_j) * g(h_j) kills the h^2 term.
    let alpha: Vec<f64> = h_grid
        .windows(2)
        .map(|w| w[0] * w[0] / (w[0] * w[0] - w[1] * w[1]))
        .collect();

    let stats = chunk_stats(batch, k, |s1, y, out| {
        let x0 = ev.value_raw(s1, y);
        let w = y + price0_slope * accrual;
        for i in 0..m {
            let h = h_grid[i];
            let up = (x0 + h * w > 0.0) as i32;
            let dn = (x0 - h * w > 0.0) as i32;
            out[i] = y * f64::from(up - dn) * inv2h[i];
        }
        for j in 0..m - 1 {
            out[m + j] = alpha[j] * out[j + 1] + (1.0 - alpha[j]) * out[j];
        }
    });

    if m == 1 {
        return Ok(stats[0].estimate());
    }

    let combos: Vec<Estimate> = stats[m..].iter().map(RunningStats::estimate).collect();
    let deepest = combos[m - 2];
    for c in &combos[..m - 2] {
        let spread = (c.value - deepest.value).abs();
        let stderr = (c.stderr * c.stderr + deepest.stderr * deepest.stderr).sqrt();
        if spread > 5.0 * stderr {
            return Err(KvaError::NoConvergence { spread, stderr });
        }
    }
    Ok(deepest)
}
