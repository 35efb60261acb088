//! Autoregressive sampling over a polytope.
//!
//! Coordinates are drawn in index order. At step `i` the LP interval of
//! `a_i` on the current reduced system is computed, a [`ShapeProvider`]
//! supplies beta shapes, `a_i` is drawn from the four-parameter beta on that
//! interval and the system is reduced. The last coordinate is whatever the
//! sum constraint leaves. Any point drawn this way lies in the polytope, and
//! every point of the polytope can be drawn.

use serde::{Deserialize, Serialize};

use crate::beta::StepLaw;
use crate::lp::{self, CoordinateBounds};
use crate::polytope::flat_dirichlet;
use crate::{Error, Polytope, Result, ALGEBRA_TOLERANCE};

/// Slack allowed between a replayed action and its cached interval.
pub const REPLAY_TOLERANCE: f64 = 1e-6;

/// Default proposal budget of the rejection sampler.
pub const DEFAULT_MAX_TRIES: usize = 1_000_000;

/// Supplies beta shapes for each autoregressive step.
///
/// `state` is whatever the provider conditions on (a state embedding for a
/// policy network, ignored by constant providers); `prefix` holds the
/// already-fixed coordinates `a_0..a_{step-1}`.
pub trait ShapeProvider {
    fn shapes(&self, state: &[f64], prefix: &[f64], step: usize) -> (f64, f64);
}

/// State-independent shapes, one pair per sampled step.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantShapes {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
}

impl ConstantShapes {
    /// `Beta(1, 1)` at every step: uniform on each interval.
    pub fn flat(n: usize) -> Self {
        ConstantShapes { alphas: vec![1.0; n - 1], betas: vec![1.0; n - 1] }
    }

    pub fn uniform(n: usize, alpha: f64, beta: f64) -> Self {
        ConstantShapes { alphas: vec![alpha; n - 1], betas: vec![beta; n - 1] }
    }
}

impl ShapeProvider for ConstantShapes {
    fn shapes(&self, _state: &[f64], _prefix: &[f64], step: usize) -> (f64, f64) {
        (self.alphas[step], self.betas[step])
    }
}

impl<F: Fn(&[f64], &[f64], usize) -> (f64, f64)> ShapeProvider for F {
    fn shapes(&self, state: &[f64], prefix: &[f64], step: usize) -> (f64, f64) {
        self(state, prefix, step)
    }
}

/// One policy draw.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationSample {
    /// Allocation in sampling order, summing to one.
    pub action: Vec<f64>,
    /// LP interval of each sampled step (`n - 1` entries).
    pub intervals: Vec<CoordinateBounds>,
    /// Beta shapes used at each step.
    pub shapes: Vec<(f64, f64)>,
    pub step_logps: Vec<f64>,
    pub joint_logp: f64,
    pub forced: Vec<bool>,
}

impl AllocationSample {
    /// Sum of the per-step entropies of this draw; forced steps add zero.
    pub fn entropy(&self) -> Result<f64> {
        let mut total = 0.0;
        for (b, &(a, bb)) in self.intervals.iter().zip(&self.shapes) {
            total += StepLaw::new(a, bb, *b)?.entropy();
        }
        Ok(total)
    }
}

/// Draws one allocation from the autoregressive policy.
pub fn sample<P, R>(p: &Polytope, provider: &P, state: &[f64], rng: &mut R) -> Result<AllocationSample>
where
    P: ShapeProvider + ?Sized,
    R: rand::Rng + ?Sized,
{
    walk(p, provider, state, |law| law.sample(rng))
}

/// Deterministic counterpart of [`sample`]: every step takes the mean of its
/// beta law.
pub fn mean_action<P>(p: &Polytope, provider: &P, state: &[f64]) -> Result<AllocationSample>
where
    P: ShapeProvider + ?Sized,
{
    walk(p, provider, state, |law| law.mean())
}

fn walk<P, F>(p: &Polytope, provider: &P, state: &[f64], mut draw: F) -> Result<AllocationSample>
where
    P: ShapeProvider + ?Sized,
    F: FnMut(&StepLaw) -> f64,
{
    let n = p.n();
    let mut system = p.root();
    let mut out = AllocationSample {
        action: Vec::with_capacity(n),
        intervals: Vec::with_capacity(n - 1),
        shapes: Vec::with_capacity(n - 1),
        step_logps: Vec::with_capacity(n - 1),
        joint_logp: 0.0,
        forced: Vec::with_capacity(n - 1),
    };
    for i in 0..n - 1 {
        let bounds = lp::bounds(&system, i)?;
        let shapes = provider.shapes(state, system.fixed_prefix(), i);
        let law = StepLaw::new(shapes.0, shapes.1, bounds)?;
        let x = draw(&law);
        let logp = law.log_pdf(x)?;
        out.intervals.push(bounds);
        out.shapes.push(shapes);
        out.step_logps.push(logp);
        out.forced.push(law.is_forced());
        out.action.push(x);
        system.fix(x);
    }
    out.action.push(1.0 - out.action.iter().sum::<f64>());
    out.joint_logp = out.step_logps.iter().sum();
    Ok(out)
}

/// LP intervals met when walking the coordinates of `action` in order.
pub fn intervals_for(p: &Polytope, action: &[f64]) -> Result<Vec<CoordinateBounds>> {
    check_len(p, action)?;
    let mut system = p.root();
    let mut out = Vec::with_capacity(p.n() - 1);
    for (i, &x) in action.iter().take(p.n() - 1).enumerate() {
        out.push(lp::bounds(&system, i)?);
        system.fix(x);
    }
    Ok(out)
}

fn check_len(p: &Polytope, action: &[f64]) -> Result<()> {
    if action.len() != p.n() {
        return Err(Error::DimensionMismatch(format!("action has {} entries, expected {}", action.len(), p.n())));
    }
    Ok(())
}

/// Joint log-density of `action` under the autoregressive policy.
///
/// With `cached` intervals no LP is solved; they must be the intervals of
/// this action's prefixes (as stored by [`sample`]).
pub fn log_prob<P>(
    p: &Polytope,
    provider: &P,
    state: &[f64],
    action: &[f64],
    cached: Option<&[CoordinateBounds]>,
) -> Result<f64>
where
    P: ShapeProvider + ?Sized,
{
    check_len(p, action)?;
    let computed;
    let intervals = match cached {
        Some(c) => {
            if c.len() != p.n() - 1 {
                return Err(Error::DimensionMismatch(format!("{} cached intervals, expected {}", c.len(), p.n() - 1)));
            }
            c
        }
        None => {
            computed = intervals_for(p, action)?;
            &computed[..]
        }
    };
    let mut logps = Vec::with_capacity(intervals.len());
    for (i, b) in intervals.iter().enumerate() {
        let x = action[i];
        if x < b.lo - REPLAY_TOLERANCE || x > b.hi + REPLAY_TOLERANCE {
            return Err(Error::OutOfSupport { x, lo: b.lo, hi: b.hi });
        }
        let (a, bb) = provider.shapes(state, &action[..i], i);
        logps.push(StepLaw::new(a, bb, *b)?.log_pdf(x.clamp(b.lo, b.hi))?);
    }
    Ok(logps.iter().sum())
}

/// Batch mean of the summed per-step entropies.
pub fn empirical_entropy(batch: &[AllocationSample]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empirical entropy of an empty batch".into()));
    }
    let mut total = 0.0;
    for s in batch {
        total += s.entropy()?;
    }
    Ok(total / batch.len() as f64)
}

/// Proposal statistics of the rejection sampler.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RejectionStats {
    pub proposals: usize,
    pub accepted: usize,
}

impl RejectionStats {
    pub fn acceptance_rate(&self) -> f64 {
        if self.proposals == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposals as f64
        }
    }
}

/// Uniform draw over the polytope: flat-Dirichlet proposals on the simplex,
/// kept when every row holds within the algebra tolerance.
pub fn uniform_rejection_sample<R: rand::Rng + ?Sized>(p: &Polytope, rng: &mut R, max_tries: usize) -> Result<Vec<f64>> {
    let mut stats = RejectionStats::default();
    propose_until_accepted(p, rng, max_tries, &mut stats)
}

fn propose_until_accepted<R: rand::Rng + ?Sized>(
    p: &Polytope,
    rng: &mut R,
    max_tries: usize,
    stats: &mut RejectionStats,
) -> Result<Vec<f64>> {
    for _ in 0..max_tries {
        let x = flat_dirichlet(rng, p.n());
        stats.proposals += 1;
        if p.max_violation(&x)? <= ALGEBRA_TOLERANCE {
            stats.accepted += 1;
            return Ok(x);
        }
    }
    Err(Error::AcceptanceTooLow { tries: max_tries })
}

/// `count` uniform draws; `max_tries` bounds the proposals spent per draw.
pub fn rejection_batch<R: rand::Rng + ?Sized>(
    p: &Polytope,
    count: usize,
    rng: &mut R,
    max_tries: usize,
) -> Result<(Vec<Vec<f64>>, RejectionStats)> {
    let mut stats = RejectionStats::default();
    let mut points = Vec::with_capacity(count);
    for _ in 0..count {
        points.push(propose_until_accepted(p, rng, max_tries, &mut stats)?);
    }
    Ok((points, stats))
}

/// Fraction of `proposals` flat-Dirichlet proposals that land in the polytope.
pub fn acceptance_rate<R: rand::Rng + ?Sized>(p: &Polytope, proposals: usize, rng: &mut R) -> Result<f64> {
    let mut accepted = 0usize;
    for _ in 0..proposals {
        if p.max_violation(&flat_dirichlet(rng, p.n()))? <= ALGEBRA_TOLERANCE {
            accepted += 1;
        }
    }
    Ok(accepted as f64 / proposals.max(1) as f64)
}

/// Order in which entities are allocated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityOrder {
    #[default]
    Forward,
    Reversed,
}

impl EntityOrder {
    /// `perm[j]` is the entity allocated at sampling position `j`.
    pub fn permutation(&self, n: usize) -> Vec<usize> {
        match self {
            EntityOrder::Forward => (0..n).collect(),
            EntityOrder::Reversed => (0..n).rev().collect(),
        }
    }

    /// The polytope with columns in sampling order.
    pub fn arrange(&self, p: &Polytope) -> Result<Polytope> {
        match self {
            EntityOrder::Forward => Ok(p.clone()),
            EntityOrder::Reversed => p.permute_columns(&self.permutation(p.n())),
        }
    }

    /// Maps an action in sampling order back to entity order.
    pub fn to_entities(&self, sampled: &[f64]) -> Vec<f64> {
        let perm = self.permutation(sampled.len());
        let mut out = vec![0.0; sampled.len()];
        for (j, &e) in perm.iter().enumerate() {
            out[e] = sampled[j];
        }
        out
    }

    /// Maps an action in entity order to sampling order.
    pub fn to_sampling(&self, entities: &[f64]) -> Vec<f64> {
        self.permutation(entities.len()).iter().map(|&e| entities[e]).collect()
    }
}

impl std::str::FromStr for EntityOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" | "indices" => Ok(EntityOrder::Forward),
            "reversed" => Ok(EntityOrder::Reversed),
            other => Err(Error::InvalidArgument(format!("unknown order {other:?}"))),
        }
    }
}
