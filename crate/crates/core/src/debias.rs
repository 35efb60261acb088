//! Per-step beta shapes that make the untrained autoregressive policy close
//! to uniform over the polytope.
//!
//! Uniform points are drawn by rejection; each point is walked through the
//! autoregressive steps, its coordinate is normalized into the step's LP
//! interval, and a beta is fitted per step to the normalized values. The
//! last coordinate is fixed by the sum constraint and gets no term.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beta::mle_fit;
use crate::sampler::{self, ConstantShapes, DEFAULT_MAX_TRIES};
use crate::{lp, Error, Polytope, Result};

/// Default number of uniform samples used by [`fit`].
pub const DEFAULT_K: usize = 10_000;

/// Smallest `k` accepted by [`fit`].
pub const MIN_K: usize = 1000;

/// Default lower bound on fitted shapes.
pub const DEFAULT_MIN_SHAPE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebiasTerms {
    pub polytope_hash: String,
    pub k: usize,
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
}

impl DebiasTerms {
    /// `Beta(1, 1)` terms, i.e. no de-biasing.
    pub fn flat(p: &Polytope) -> Self {
        DebiasTerms { polytope_hash: p.hash_hex(), k: 0, alphas: vec![1.0; p.n() - 1], betas: vec![1.0; p.n() - 1] }
    }

    pub fn provider(&self) -> ConstantShapes {
        ConstantShapes { alphas: self.alphas.clone(), betas: self.betas.clone() }
    }

    pub fn matches(&self, p: &Polytope) -> bool {
        self.polytope_hash == p.hash_hex() && self.alphas.len() + 1 == p.n()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let terms: DebiasTerms = serde_json::from_str(&fs::read_to_string(path)?)?;
        if terms.alphas.len() != terms.betas.len() {
            return Err(Error::DimensionMismatch("alphas and betas differ in length".into()));
        }
        Ok(terms)
    }

    /// Loads terms and checks they were fitted on `p`.
    pub fn load_for(path: impl AsRef<Path>, p: &Polytope) -> Result<Self> {
        let terms = Self::load(path)?;
        if !terms.matches(p) {
            return Err(Error::InvalidArgument(format!(
                "terms were fitted on polytope {} but this one is {}",
                terms.polytope_hash,
                p.hash_hex()
            )));
        }
        Ok(terms)
    }
}

/// Normalized position of every uniform point's coordinate inside its step
/// interval, per step. Points whose interval collapsed at a step are left out
/// of that step.
pub fn normalized_positions(p: &Polytope, points: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let steps = p.n() - 1;
    let walked: Vec<Vec<Option<f64>>> = points
        .par_iter()
        .map(|x| {
            let mut system = p.root();
            let mut out = Vec::with_capacity(steps);
            for (i, &xi) in x.iter().take(steps).enumerate() {
                let b = lp::bounds(&system, i)?;
                out.push((!b.is_forced()).then(|| (xi - b.lo) / b.width()));
                system.fix(xi);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok((0..steps).map(|i| walked.iter().filter_map(|w| w[i]).collect()).collect())
}

/// Fits de-biasing terms from `k` uniform samples.
pub fn fit<R: rand::Rng + ?Sized>(p: &Polytope, k: usize, rng: &mut R) -> Result<DebiasTerms> {
    fit_with(p, k, rng, DEFAULT_MIN_SHAPE)
}

pub fn fit_with<R: rand::Rng + ?Sized>(p: &Polytope, k: usize, rng: &mut R, min_shape: f64) -> Result<DebiasTerms> {
    if k < MIN_K {
        return Err(Error::InvalidArgument(format!("need k >= {MIN_K} samples, got {k}")));
    }
    let (points, stats) = sampler::rejection_batch(p, k, rng, DEFAULT_MAX_TRIES)?;
    log::info!("de-bias: {} uniform points, acceptance rate {:.4}", k, stats.acceptance_rate());
    let per_step = normalized_positions(p, &points)?;
    let mut alphas = Vec::with_capacity(per_step.len());
    let mut betas = Vec::with_capacity(per_step.len());
    for (dim, values) in per_step.iter().enumerate() {
        let f = mle_fit(values).map_err(|e| Error::DimensionFitFailed { dim, reason: e.to_string() })?;
        if !f.converged {
            log::warn!("de-bias: step {dim} fell back to method of moments");
        }
        alphas.push(f.alpha.max(min_shape));
        betas.push(f.beta.max(min_shape));
    }
    Ok(DebiasTerms { polytope_hash: p.hash_hex(), k, alphas, betas })
}

/// How close autoregressive sampling with fixed terms comes to uniform.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformityReport {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub oracle_means: Vec<f64>,
    /// Largest `|means[i] - oracle_means[i]|`.
    pub max_mean_deviation: f64,
    /// Two-sample chi-square statistic per coordinate over
    /// [`REPORT_BINS`] equal bins on `[0, 1]`.
    pub chi_square: Vec<f64>,
    pub chi_square_total: f64,
    pub acceptance_rate: f64,
}

pub const REPORT_BINS: usize = 10;

/// Draws `samples` actions with the terms as constant shapes and compares
/// them to `samples` rejection-sampled uniform points.
pub fn uniformity_report<R: rand::Rng + ?Sized>(
    p: &Polytope,
    terms: &DebiasTerms,
    samples: usize,
    rng: &mut R,
) -> Result<UniformityReport> {
    if samples == 0 {
        return Err(Error::InvalidArgument("uniformity report needs at least one sample".into()));
    }
    let provider = terms.provider();
    let mut drawn = Vec::with_capacity(samples);
    for _ in 0..samples {
        drawn.push(sampler::sample(p, &provider, &[], rng)?.action);
    }
    let (oracle, stats) = sampler::rejection_batch(p, samples, rng, DEFAULT_MAX_TRIES)?;
    let (means, stds) = moments(&drawn);
    let (oracle_means, _) = moments(&oracle);
    let max_mean_deviation = means.iter().zip(&oracle_means).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let chi_square: Vec<f64> = (0..p.n())
        .map(|i| {
            let h1 = histogram(drawn.iter().map(|x| x[i]));
            let h2 = histogram(oracle.iter().map(|x| x[i]));
            h1.iter()
                .zip(&h2)
                .filter(|(a, b)| **a + **b > 0.0)
                .map(|(a, b)| (a - b).powi(2) / (a + b))
                .sum()
        })
        .collect();
    let chi_square_total = chi_square.iter().sum();
    Ok(UniformityReport {
        means,
        stds,
        oracle_means,
        max_mean_deviation,
        chi_square,
        chi_square_total,
        acceptance_rate: stats.acceptance_rate(),
    })
}

/// Per-coordinate mean and standard deviation.
pub fn moments(xs: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = xs.first().map_or(0, Vec::len);
    let count = xs.len().max(1) as f64;
    let means: Vec<f64> = (0..n).map(|i| xs.iter().map(|x| x[i]).sum::<f64>() / count).collect();
    let stds = (0..n)
        .map(|i| (xs.iter().map(|x| (x[i] - means[i]).powi(2)).sum::<f64>() / count).sqrt())
        .collect();
    (means, stds)
}

fn histogram(values: impl Iterator<Item = f64>) -> [f64; REPORT_BINS] {
    let mut h = [0.0; REPORT_BINS];
    for v in values {
        let b = ((v * REPORT_BINS as f64) as isize).clamp(0, REPORT_BINS as isize - 1) as usize;
        h[b] += 1.0;
    }
    h
}
