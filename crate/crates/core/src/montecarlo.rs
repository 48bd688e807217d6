//! Deterministic parallel Monte Carlo accumulation.
//!
//! Paths are grouped in fixed-size blocks. Each path draws from its own
//! substream and blocks are merged in index order, so the result is
//! bit-identical for any thread count.

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::RngStream;

const BLOCK: usize = 512;

/// Simulation budget for one Monte Carlo estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McBudget {
    pub paths: usize,
    pub dt: f64,
    pub stream: RngStream,
}

impl McBudget {
    pub fn new(paths: usize, dt: f64, stream: RngStream) -> Self {
        Self { paths, dt, stream }
    }

    pub fn validate(&self) -> Result<()> {
        if self.paths < 2 {
            return Err(Error::InvalidBudget(format!("need at least 2 paths, got {}", self.paths)));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::NonPositiveStep(self.dt));
        }
        Ok(())
    }

    pub fn with_stream(self, stream: RngStream) -> Self {
        Self { stream, ..self }
    }
}

/// A point estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self { value, std_error: 0.0 }
    }

    /// `|self - target| <= k * se` (with `se` the own standard error).
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.value - target).abs() <= k * self.std_error
    }
}

/// Running means and co-moments of a fixed number of per-path statistics.
#[derive(Debug, Clone)]
pub struct Moments {
    n: usize,
    mean: Vec<f64>,
    comoment: Vec<f64>,
}

impl Moments {
    pub fn new(dim: usize) -> Self {
        Self { n: 0, mean: vec![0.0; dim], comoment: vec![0.0; dim * dim] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn push(&mut self, xs: &[f64]) {
        let d = self.dim();
        self.n += 1;
        let n = self.n as f64;
        let delta: Vec<f64> = xs.iter().zip(&self.mean).map(|(x, m)| x - m).collect();
        for (m, dl) in self.mean.iter_mut().zip(&delta) {
            *m += dl / n;
        }
        for (row, di) in self.comoment.chunks_mut(d).zip(&delta) {
            for ((c, x), m) in row.iter_mut().zip(xs).zip(&self.mean) {
                *c += di * (x - m);
            }
        }
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = other.clone();
            return;
        }
        let d = self.dim();
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        let delta: Vec<f64> = other.mean.iter().zip(&self.mean).map(|(b, a)| b - a).collect();
        for i in 0..d {
            for j in 0..d {
                self.comoment[i * d + j] += other.comoment[i * d + j] + delta[i] * delta[j] * na * nb / n;
            }
        }
        for (m, dl) in self.mean.iter_mut().zip(&delta) {
            *m += dl * nb / n;
        }
        self.n += other.n;
    }

    pub fn mean(&self, i: usize) -> f64 {
        self.mean[i]
    }

    /// Sample covariance (denominator `n - 1`).
    pub fn covariance(&self, i: usize, j: usize) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        self.comoment[i * self.dim() + j] / (self.n - 1) as f64
    }

    pub fn estimate(&self, i: usize) -> Estimate {
        self.linear(&unit(self.dim(), i))
    }

    /// Estimate of `sum_i c_i E[X_i]`.
    pub fn linear(&self, c: &[f64]) -> Estimate {
        let value = dot(c, &self.mean);
        Estimate { value, std_error: (self.quadratic(c) / self.n.max(1) as f64).sqrt() }
    }

    /// Delta-method estimate of `(num . E[X]) / (den . E[X])`.
    pub fn ratio(&self, num: &[f64], den: &[f64]) -> Estimate {
        let top = dot(num, &self.mean);
        let bottom = dot(den, &self.mean);
        let value = top / bottom;
        let g: Vec<f64> = num.iter().zip(den).map(|(a, b)| (a - value * b) / bottom).collect();
        Estimate { value, std_error: (self.quadratic(&g) / self.n.max(1) as f64).sqrt() }
    }

    fn quadratic(&self, c: &[f64]) -> f64 {
        let d = self.dim();
        let mut acc = 0.0;
        for i in 0..d {
            for j in 0..d {
                acc += c[i] * c[j] * self.covariance(i, j);
            }
        }
        acc.max(0.0)
    }
}

fn unit(d: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; d];
    v[i] = 1.0;
    v
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Runs `sample` once per path and accumulates its `dim` outputs.
///
/// `sample` receives the path index and a generator for that path's
/// substream of `stream`.
pub fn collect<F>(paths: usize, dim: usize, stream: RngStream, sample: F) -> Moments
where
    F: Fn(usize, &mut ChaCha8Rng, &mut [f64]) + Sync,
{
    let blocks = paths.div_ceil(BLOCK);
    let parts: Vec<Moments> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut m = Moments::new(dim);
            let mut buf = vec![0.0; dim];
            for i in b * BLOCK..((b + 1) * BLOCK).min(paths) {
                let mut rng = stream.substream(i as u64).generator();
                buf.fill(0.0);
                sample(i, &mut rng, &mut buf);
                m.push(&buf);
            }
            m
        })
        .collect();
    let mut total = Moments::new(dim);
    for p in &parts {
        total.merge(p);
    }
    total
}
