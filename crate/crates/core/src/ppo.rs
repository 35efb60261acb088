//! On-policy PPO for the autoregressive policy.
//!
//! Rollouts are collected by parallel workers from a read-only policy. Step
//! intervals are stored with each transition and reused by every epoch, so
//! updates solve no LPs.

use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::debias::DebiasTerms;
use crate::envs::{Env, EnvSpec, VIOLATION_TOLERANCE};
use crate::lp::CoordinateBounds;
use crate::nn::{value_net, Checkpoint, Mlp, PolicyConfig, PolicyNet, CHECKPOINT_VERSION};
use crate::sampler::{self, EntityOrder};
use crate::{rng_from_seed, Error, Polytope, Result, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub clip: f64,
    pub entropy_coef: f64,
    pub gae_lambda: f64,
    pub gamma: f64,
    pub epochs: usize,
    pub minibatch: usize,
    /// Transitions per worker per iteration.
    pub rollout: usize,
    pub workers: usize,
    pub grad_clip: f64,
    pub value_coef: f64,
    pub total_steps: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            clip: 0.3,
            entropy_coef: 0.01,
            gae_lambda: 0.95,
            gamma: 1.0,
            epochs: 10,
            minibatch: 64,
            rollout: 512,
            workers: 8,
            grad_clip: 2.0,
            value_coef: 0.5,
            total_steps: 150_000,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn batch_size(&self) -> usize {
        self.rollout * self.workers
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.clip > 0.0
            && self.entropy_coef >= 0.0
            && (0.0..=1.0).contains(&self.gae_lambda)
            && (0.0..=1.0).contains(&self.gamma)
            && self.epochs > 0
            && self.minibatch > 0
            && self.rollout > 0
            && self.workers > 0
            && self.grad_clip > 0.0
            && self.value_coef >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid training config {self:?}")))
        }
    }
}

/// Transitions of one worker, in time order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Segment {
    pub states: Vec<Vec<f64>>,
    /// Actions in sampling order.
    pub actions: Vec<Vec<f64>>,
    pub intervals: Vec<Vec<CoordinateBounds>>,
    pub logps: Vec<f64>,
    pub entropies: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    /// Episode ended after this transition.
    pub dones: Vec<bool>,
    /// Value of the state after the last transition (0 if it ended an episode).
    pub bootstrap: f64,
    pub episode_returns: Vec<f64>,
    pub violations: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Collected batch with advantages, flattened over workers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutBuffer {
    pub segments: Vec<Segment>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.segments.iter().map(Segment::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// (segment, index) of every transition in flattened order.
    fn index(&self) -> Vec<(usize, usize)> {
        self.segments.iter().enumerate().flat_map(|(s, seg)| (0..seg.len()).map(move |t| (s, t))).collect()
    }

    pub fn compute_advantages(&mut self, gamma: f64, lambda: f64) {
        self.advantages.clear();
        self.returns.clear();
        for seg in &self.segments {
            let (a, r) = gae(&seg.rewards, &seg.values, &seg.dones, seg.bootstrap, gamma, lambda);
            self.advantages.extend(a);
            self.returns.extend(r);
        }
    }

    pub fn episode_returns(&self) -> Vec<f64> {
        self.segments.iter().flat_map(|s| s.episode_returns.iter().copied()).collect()
    }
}

/// Generalized advantage estimation over one trajectory segment.
///
/// `dones[t]` marks that the episode ended after step `t`; `bootstrap` is the
/// value of the state following the last step.
pub fn gae(rewards: &[f64], values: &[f64], dones: &[bool], bootstrap: f64, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let t_max = rewards.len();
    let mut adv = vec![0.0; t_max];
    let mut next_adv = 0.0;
    let mut next_value = bootstrap;
    for t in (0..t_max).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(params: usize, lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; params], v: vec![0.0; params], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

/// Rescales `grads` to norm at most `max_norm`; returns the original norm.
pub fn clip_grad_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
}

/// One row of the metrics CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub steps: usize,
    pub mean_reward: f64,
    pub entropy: f64,
    pub violations: usize,
    pub wall_ms: u128,
}

pub const METRICS_HEADER: &str = "steps,mean_reward,entropy,violations,wall_ms";

impl IterationRecord {
    pub fn csv_row(&self) -> String {
        format!("{},{},{},{},{}", self.steps, self.mean_reward, self.entropy, self.violations, self.wall_ms)
    }
}

struct Worker {
    env: Box<dyn Env>,
    state: Vec<f64>,
    rng: Rng,
    id: u64,
    episodes: u64,
    episode_return: f64,
}

fn episode_seed(base: u64, worker: u64, episode: u64) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (worker << 40) ^ episode
}

/// Policy, value network, optimizers and workers of one training run.
pub struct Trainer {
    pub config: TrainConfig,
    pub policy: PolicyNet,
    pub value: Mlp,
    /// Action space in sampling order.
    polytope: Polytope,
    order: EntityOrder,
    workers: Vec<Worker>,
    adam_policy: Adam,
    adam_value: Adam,
    rng: Rng,
    pub steps: usize,
    started: Instant,
}

impl Trainer {
    /// `terms` must have been fitted on the polytope arranged in `order`.
    pub fn new(spec: &EnvSpec, terms: &DebiasTerms, order: EntityOrder, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let workers = (0..config.workers)
            .map(|w| {
                let mut env = spec.build()?;
                let state = env.reset(episode_seed(config.seed, w as u64, 0));
                Ok(Worker {
                    env,
                    state,
                    rng: rng_from_seed(episode_seed(config.seed, w as u64, u64::MAX >> 24)),
                    id: w as u64,
                    episodes: 0,
                    episode_return: 0.0,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let polytope = order.arrange(workers[0].env.polytope())?;
        if !terms.matches(&polytope) {
            return Err(Error::InvalidArgument("de-bias terms were fitted on a different polytope or order".into()));
        }
        let state_dim = workers[0].env.state_dim();
        let n = polytope.n();
        let policy = PolicyNet::init_with(n, state_dim, terms, config.seed, PolicyConfig::default())?;
        let value = value_net(state_dim, 32, config.seed.wrapping_add(1))?;
        Ok(Trainer {
            adam_policy: Adam::new(policy.param_count(), config.lr),
            adam_value: Adam::new(value.param_count(), config.lr),
            rng: rng_from_seed(config.seed.wrapping_add(2)),
            config,
            policy,
            value,
            polytope,
            order,
            workers,
            steps: 0,
            started: Instant::now(),
        })
    }

    pub fn polytope(&self) -> &Polytope {
        &self.polytope
    }

    pub fn order(&self) -> EntityOrder {
        self.order
    }

    /// One rollout of `config.rollout` transitions per worker.
    pub fn collect(&mut self) -> Result<RolloutBuffer> {
        let (policy, value, p, order) = (&self.policy, &self.value, &self.polytope, self.order);
        let rollout = self.config.rollout;
        let base = self.config.seed;
        let segments = self
            .workers
            .par_iter_mut()
            .map(|w| collect_segment(w, policy, value, p, order, rollout, base))
            .collect::<Result<Vec<_>>>()?;
        let mut buf = RolloutBuffer { segments, ..Default::default() };
        buf.compute_advantages(self.config.gamma, self.config.gae_lambda);
        self.steps += buf.len();
        Ok(buf)
    }

    /// PPO epochs over `buf`.
    pub fn update(&mut self, buf: &RolloutBuffer) -> Result<UpdateStats> {
        let index = buf.index();
        let mut order: Vec<usize> = (0..index.len()).collect();
        let mut stats = UpdateStats::default();
        let mut batches = 0.0;
        for _ in 0..self.config.epochs {
            order.shuffle(&mut self.rng);
            for chunk in order.chunks(self.config.minibatch) {
                let s = self.minibatch_step(buf, &index, chunk)?;
                stats.policy_loss += s.policy_loss;
                stats.value_loss += s.value_loss;
                stats.entropy += s.entropy;
                stats.clip_fraction += s.clip_fraction;
                batches += 1.0;
            }
        }
        if batches > 0.0 {
            stats.policy_loss /= batches;
            stats.value_loss /= batches;
            stats.entropy /= batches;
            stats.clip_fraction /= batches;
        }
        Ok(stats)
    }

    fn minibatch_step(&mut self, buf: &RolloutBuffer, index: &[(usize, usize)], chunk: &[usize]) -> Result<UpdateStats> {
        let (pg, vg, stats) = minibatch_gradients(&self.policy, &self.value, &self.config, buf, index, chunk)?;
        let mut pg = pg;
        let mut vg = vg;
        clip_grad_norm(&mut pg, self.config.grad_clip);
        clip_grad_norm(&mut vg, self.config.grad_clip);
        let mut flat = self.policy.params_flat();
        self.adam_policy.step(&mut flat, &pg);
        self.policy.set_params_flat(&flat)?;
        self.adam_value.step(self.value.params_mut(), &vg);
        Ok(stats)
    }

    fn record(&self, buf: &RolloutBuffer) -> IterationRecord {
        let returns = buf.episode_returns();
        let mean_reward = if returns.is_empty() {
            f64::NAN
        } else {
            returns.iter().sum::<f64>() / returns.len() as f64
        };
        let entropies: Vec<f64> = buf.segments.iter().flat_map(|s| s.entropies.iter().copied()).collect();
        IterationRecord {
            steps: self.steps,
            mean_reward,
            entropy: entropies.iter().sum::<f64>() / entropies.len().max(1) as f64,
            violations: buf.segments.iter().map(|s| s.violations).sum(),
            wall_ms: self.started.elapsed().as_millis(),
        }
    }

    /// Collect and update once; returns the iteration's metrics row.
    pub fn iterate(&mut self) -> Result<IterationRecord> {
        let buf = self.collect()?;
        let rec = self.record(&buf);
        let stats = self.update(&buf)?;
        log::info!(
            "steps {} reward {:.4} entropy {:.4} policy loss {:.4} value loss {:.4} clipped {:.3}",
            rec.steps,
            rec.mean_reward,
            rec.entropy,
            stats.policy_loss,
            stats.value_loss,
            stats.clip_fraction
        );
        Ok(rec)
    }

    /// Runs iterations while a full batch still fits in `total_steps`,
    /// calling `on_record` after each.
    pub fn train_with<F: FnMut(&IterationRecord, &Trainer) -> Result<()>>(
        &mut self,
        mut on_record: F,
    ) -> Result<Vec<IterationRecord>> {
        let mut out = Vec::new();
        while self.steps + self.config.batch_size() <= self.config.total_steps {
            let rec = self.iterate()?;
            on_record(&rec, self)?;
            out.push(rec);
        }
        Ok(out)
    }

    pub fn train(&mut self) -> Result<Vec<IterationRecord>> {
        self.train_with(|_, _| Ok(()))
    }

    pub fn checkpoint(&self, meta: serde_json::Value) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            policy: self.policy.clone(),
            value: self.value.clone(),
            rng: self.rng.clone(),
            meta,
        }
    }
}

fn collect_segment(
    w: &mut Worker,
    policy: &PolicyNet,
    value: &Mlp,
    p: &Polytope,
    order: EntityOrder,
    rollout: usize,
    base: u64,
) -> Result<Segment> {
    let mut seg = Segment::default();
    for _ in 0..rollout {
        let emb = policy.embed(&w.state)?;
        let draw = sampler::sample(p, policy, &emb, &mut w.rng)?;
        let entity_action = order.to_entities(&draw.action);
        if w.env.polytope().max_violation(&entity_action)? > VIOLATION_TOLERANCE {
            seg.violations += 1;
        }
        let v = value.forward(&w.state)?[0];
        let tr = w.env.step(&entity_action)?;
        seg.entropies.push(draw.entropy()?);
        seg.states.push(std::mem::replace(&mut w.state, tr.state));
        seg.actions.push(draw.action);
        seg.intervals.push(draw.intervals);
        seg.logps.push(draw.joint_logp);
        seg.rewards.push(tr.reward);
        seg.values.push(v);
        seg.dones.push(tr.done);
        w.episode_return += tr.reward;
        if tr.done {
            seg.episode_returns.push(w.episode_return);
            w.episode_return = 0.0;
            w.episodes += 1;
            w.state = w.env.reset(episode_seed(base, w.id, w.episodes));
        }
    }
    seg.bootstrap = if seg.dones.last().copied().unwrap_or(true) { 0.0 } else { value.forward(&w.state)?[0] };
    Ok(seg)
}

/// Gradients of the clipped surrogate, entropy bonus and value loss over one
/// minibatch, before clipping. Advantages are normalized within the
/// minibatch.
pub fn minibatch_gradients(
    policy: &PolicyNet,
    value: &Mlp,
    config: &TrainConfig,
    buf: &RolloutBuffer,
    index: &[(usize, usize)],
    chunk: &[usize],
) -> Result<(Vec<f64>, Vec<f64>, UpdateStats)> {
    let b = chunk.len() as f64;
    let adv: Vec<f64> = chunk.iter().map(|&k| buf.advantages[k]).collect();
    let mean = adv.iter().sum::<f64>() / b;
    let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / b).sqrt();
    let norm: Vec<f64> = adv.iter().map(|a| if chunk.len() > 1 { (a - mean) / (std + 1e-8) } else { *a }).collect();

    let mut pg = vec![0.0; policy.param_count()];
    let mut vg = vec![0.0; value.param_count()];
    let mut stats = UpdateStats::default();
    for (j, &k) in chunk.iter().enumerate() {
        let (s, t) = index[k];
        let seg = &buf.segments[s];
        let trace = policy.trace(&seg.states[t], &seg.actions[t], &seg.intervals[t])?;
        let ratio = (trace.log_prob - seg.logps[t]).exp();
        let a = norm[j];
        let clipped = ratio.clamp(1.0 - config.clip, 1.0 + config.clip);
        let surrogate = (ratio * a).min(clipped * a);
        // the unclipped branch carries gradient unless clipping is active
        let active = (a >= 0.0 && ratio > 1.0 + config.clip) || (a < 0.0 && ratio < 1.0 - config.clip);
        let d_logp = if active { 0.0 } else { -a * ratio / b };
        policy.backward(&trace, d_logp, -config.entropy_coef / b, &mut pg);

        let cache = value.forward_cached(&seg.states[t])?;
        let err = cache.output[0] - buf.returns[k];
        value.backward(&cache, &[2.0 * config.value_coef * err / b], &mut vg);

        stats.policy_loss += -surrogate / b;
        stats.value_loss += config.value_coef * err * err / b;
        stats.entropy += trace.entropy / b;
        if active {
            stats.clip_fraction += 1.0 / b;
        }
    }
    stats.policy_loss -= config.entropy_coef * stats.entropy;
    let total = stats.policy_loss + stats.value_loss;
    if !total.is_finite() || pg.iter().chain(&vg).any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteLoss(format!(
            "policy loss {}, value loss {}, entropy {}",
            stats.policy_loss, stats.value_loss, stats.entropy
        )));
    }
    Ok((pg, vg, stats))
}

/// Result of running a policy without learning.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub returns: Vec<f64>,
    pub violations: usize,
}

impl Evaluation {
    pub fn mean(&self) -> f64 {
        self.returns.iter().sum::<f64>() / self.returns.len().max(1) as f64
    }

    pub fn std(&self) -> f64 {
        let m = self.mean();
        (self.returns.iter().map(|r| (r - m).powi(2)).sum::<f64>() / self.returns.len().max(1) as f64).sqrt()
    }
}

/// Runs `episodes` episodes. With `deterministic` every step takes the mean of
/// its beta law instead of sampling.
pub fn evaluate(
    env: &mut dyn Env,
    policy: &PolicyNet,
    order: EntityOrder,
    episodes: usize,
    deterministic: bool,
    seed: u64,
) -> Result<Evaluation> {
    let p = order.arrange(env.polytope())?;
    let mut rng = rng_from_seed(seed);
    let mut out = Evaluation { returns: Vec::with_capacity(episodes), violations: 0 };
    for e in 0..episodes {
        let mut state = env.reset(episode_seed(seed, u64::MAX >> 40, e as u64));
        let mut total = 0.0;
        loop {
            let emb = policy.embed(&state)?;
            let draw = if deterministic {
                sampler::mean_action(&p, policy, &emb)?
            } else {
                sampler::sample(&p, policy, &emb, &mut rng)?
            };
            let action = order.to_entities(&draw.action);
            if env.polytope().max_violation(&action)? > VIOLATION_TOLERANCE {
                out.violations += 1;
            }
            let tr = env.step(&action)?;
            total += tr.reward;
            state = tr.state;
            if tr.done {
                break;
            }
        }
        out.returns.push(total);
    }
    Ok(out)
}

/// Runs a fixed action in every step of `episodes` episodes.
pub fn evaluate_fixed(env: &mut dyn Env, action: &[f64], episodes: usize, seed: u64) -> Result<Evaluation> {
    let mut out = Evaluation { returns: Vec::with_capacity(episodes), violations: 0 };
    for e in 0..episodes {
        env.reset(episode_seed(seed, u64::MAX >> 40, e as u64));
        let mut total = 0.0;
        loop {
            let tr = env.step(action)?;
            total += tr.reward;
            if tr.done {
                break;
            }
        }
        out.returns.push(total);
    }
    Ok(out)
}
