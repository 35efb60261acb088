//! Small fully connected networks with hand-written reverse mode.
//!
//! Parameters of an [`Mlp`] live in one flat vector, layer by layer, each
//! layer storing its `out x in` weights row-major followed by its bias.
//! Gradients use the same layout, which lets the optimizer treat every
//! network as a plain slice.

use std::fs;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::beta::StepLaw;
use crate::debias::DebiasTerms;
use crate::lp::CoordinateBounds;
use crate::sampler::ShapeProvider;
use crate::{rng_from_seed, Error, Result, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
    Softplus,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
            Activation::Softplus => softplus(z),
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
            Activation::Softplus => sigmoid(z),
        }
    }
}

pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inv(y: f64) -> f64 {
    // log(exp(y) - 1) = y + log(1 - exp(-y))
    y + (-(-y).exp()).ln_1p()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    dims: Vec<usize>,
    activations: Vec<Activation>,
    params: Vec<f64>,
}

/// Activations recorded by [`Mlp::forward_cached`].
#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

impl Mlp {
    /// Zero-initialized network with layer sizes `dims` (input first).
    pub fn zeros(dims: &[usize], activations: &[Activation]) -> Result<Self> {
        if dims.len() < 2 || activations.len() != dims.len() - 1 || dims.contains(&0) {
            return Err(Error::DimensionMismatch(format!(
                "{} layer sizes need {} activations and no zero width",
                dims.len(),
                dims.len().saturating_sub(1)
            )));
        }
        let count = dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Ok(Mlp { dims: dims.to_vec(), activations: activations.to_vec(), params: vec![0.0; count] })
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, zero biases, last layer weights
    /// scaled by `final_gain`.
    pub fn init(dims: &[usize], activations: &[Activation], rng: &mut Rng, final_gain: f64) -> Result<Self> {
        let mut m = Self::zeros(dims, activations)?;
        let layers = m.layers();
        for l in 0..layers {
            let (w, _) = m.layer_ranges(l);
            let bound = 1.0 / (dims[l] as f64).sqrt();
            let gain = if l + 1 == layers { final_gain } else { 1.0 };
            for v in &mut m.params[w] {
                *v = gain * rng.random_range(-bound..bound);
            }
        }
        Ok(m)
    }

    /// Weights and biases all uniform in `±1/sqrt(fan_in)`.
    pub fn init_uniform(dims: &[usize], activations: &[Activation], rng: &mut Rng) -> Result<Self> {
        let mut m = Self::zeros(dims, activations)?;
        for l in 0..m.layers() {
            let (w, b) = m.layer_ranges(l);
            let bound = 1.0 / (dims[l] as f64).sqrt();
            for v in &mut m.params[w.start..b.end] {
                *v = rng.random_range(-bound..bound);
            }
        }
        Ok(m)
    }

    pub fn layers(&self) -> usize {
        self.activations.len()
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Weight and bias ranges of layer `l` inside the flat parameter vector.
    pub fn layer_ranges(&self, l: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let mut off = 0;
        for w in self.dims.windows(2).take(l) {
            off += w[0] * w[1] + w[1];
        }
        let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
        let w = off..off + fan_in * fan_out;
        let b = w.end..w.end + fan_out;
        (w, b)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(x)?.output)
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<MlpCache> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                x.len()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers());
        let mut pre = Vec::with_capacity(self.layers());
        let mut cur = x.to_vec();
        let mut off = 0;
        for l in 0..self.layers() {
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            let w = &self.params[off..off + fan_in * fan_out];
            let b = &self.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            off += fan_in * fan_out + fan_out;
            let z: Vec<f64> = (0..fan_out)
                .map(|o| b[o] + w[o * fan_in..(o + 1) * fan_in].iter().zip(&cur).map(|(a, c)| a * c).sum::<f64>())
                .collect();
            let act = self.activations[l];
            let next = z.iter().map(|&v| act.apply(v)).collect();
            inputs.push(std::mem::replace(&mut cur, next));
            pre.push(z);
        }
        Ok(MlpCache { inputs, pre, output: cur })
    }

    /// Accumulates parameter gradients of a scalar loss into `grads` given
    /// `d_out = dL/d(output)`, and returns `dL/d(input)`.
    pub fn backward(&self, cache: &MlpCache, d_out: &[f64], grads: &mut [f64]) -> Vec<f64> {
        debug_assert_eq!(grads.len(), self.params.len());
        let mut delta: Vec<f64> = d_out.to_vec();
        for l in (0..self.layers()).rev() {
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            let act = self.activations[l];
            for (d, &z) in delta.iter_mut().zip(&cache.pre[l]) {
                *d *= act.derivative(z);
            }
            let (wr, br) = self.layer_ranges(l);
            let input = &cache.inputs[l];
            let (gw, gb) = grads[wr.start..br.end].split_at_mut(fan_in * fan_out);
            for o in 0..fan_out {
                let d = delta[o];
                if d != 0.0 {
                    gb[o] += d;
                    for (g, &x) in gw[o * fan_in..(o + 1) * fan_in].iter_mut().zip(input) {
                        *g += d * x;
                    }
                }
            }
            let w = &self.params[wr];
            let mut d_in = vec![0.0; fan_in];
            for o in 0..fan_out {
                let d = delta[o];
                if d != 0.0 {
                    for (di, &wv) in d_in.iter_mut().zip(&w[o * fan_in..(o + 1) * fan_in]) {
                        *di += d * wv;
                    }
                }
            }
            delta = d_in;
        }
        delta
    }
}

/// Architecture knobs of [`PolicyNet`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub hidden: usize,
    pub embedding: usize,
    pub head_hidden: usize,
    /// Scale of the heads' last-layer weights at initialization.
    pub final_gain: f64,
    pub min_shape: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig { hidden: 32, embedding: 32, head_hidden: 32, final_gain: 0.01, min_shape: 1e-3 }
    }
}

/// State encoder plus one head per sampled entity.
///
/// Head `i` reads the embedding followed by `a_0..a_{i-1}` and emits two
/// pre-activations; the shapes are `softplus(z + offset) + min_shape`, with
/// offsets chosen so that zero pre-activations reproduce the de-biasing
/// terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyNet {
    pub encoder: Mlp,
    pub heads: Vec<Mlp>,
    pub offsets: Vec<(f64, f64)>,
    pub min_shape: f64,
}

/// Forward trace of one (state, action) pair, enough for backward.
#[derive(Debug, Clone)]
pub struct PolicyTrace {
    encoder: MlpCache,
    heads: Vec<Option<MlpCache>>,
    pub laws: Vec<StepLaw>,
    /// Pre-offset head outputs per step.
    raw: Vec<(f64, f64)>,
    step_grads: Vec<(f64, f64, f64, f64)>,
    pub log_prob: f64,
    pub entropy: f64,
}

impl PolicyNet {
    pub fn init(n: usize, state_dim: usize, terms: &DebiasTerms, seed: u64) -> Result<Self> {
        Self::init_with(n, state_dim, terms, seed, PolicyConfig::default())
    }

    pub fn init_with(n: usize, state_dim: usize, terms: &DebiasTerms, seed: u64, cfg: PolicyConfig) -> Result<Self> {
        if terms.alphas.len() + 1 != n || terms.betas.len() + 1 != n {
            return Err(Error::DimensionMismatch(format!(
                "{} de-bias terms for {n} entities",
                terms.alphas.len()
            )));
        }
        let mut rng = rng_from_seed(seed);
        let relu = Activation::Relu;
        let encoder = Mlp::init(&[state_dim, cfg.hidden, cfg.embedding], &[relu, relu], &mut rng, 1.0)?;
        let heads = (0..n - 1)
            .map(|i| {
                Mlp::init(
                    &[cfg.embedding + i, cfg.head_hidden, 2],
                    &[relu, Activation::Identity],
                    &mut rng,
                    cfg.final_gain,
                )
            })
            .collect::<Result<_>>()?;
        let offset = |v: f64| softplus_inv((v - cfg.min_shape).max(1e-6));
        let offsets = terms.alphas.iter().zip(&terms.betas).map(|(&a, &b)| (offset(a), offset(b))).collect();
        Ok(PolicyNet { encoder, heads, offsets, min_shape: cfg.min_shape })
    }

    /// Number of entities.
    pub fn n(&self) -> usize {
        self.heads.len() + 1
    }

    pub fn state_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn embed(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.encoder.forward(state)
    }

    fn head_input(emb: &[f64], prefix: &[f64]) -> Vec<f64> {
        let mut x = Vec::with_capacity(emb.len() + prefix.len());
        x.extend_from_slice(emb);
        x.extend_from_slice(prefix);
        x
    }

    fn shapes_from_raw(&self, step: usize, raw: (f64, f64)) -> (f64, f64) {
        let (da, db) = self.offsets[step];
        (softplus(raw.0 + da) + self.min_shape, softplus(raw.1 + db) + self.min_shape)
    }

    /// Shapes of step `step` given the state embedding and the prefix.
    pub fn head_shapes(&self, emb: &[f64], prefix: &[f64], step: usize) -> (f64, f64) {
        let out = self.heads[step].forward(&Self::head_input(emb, prefix)).expect("head input width");
        self.shapes_from_raw(step, (out[0], out[1]))
    }

    /// Log-probability and entropy of `action` (sampling order) with the
    /// given step intervals, keeping what [`Self::backward`] needs.
    pub fn trace(&self, state: &[f64], action: &[f64], intervals: &[CoordinateBounds]) -> Result<PolicyTrace> {
        if action.len() != self.n() || intervals.len() + 1 != self.n() {
            return Err(Error::DimensionMismatch(format!(
                "policy over {} entities got {} actions and {} intervals",
                self.n(),
                action.len(),
                intervals.len()
            )));
        }
        let encoder = self.encoder.forward_cached(state)?;
        let emb = &encoder.output;
        let steps = self.n() - 1;
        let mut heads = Vec::with_capacity(steps);
        let mut laws = Vec::with_capacity(steps);
        let mut raw = Vec::with_capacity(steps);
        let mut step_grads = Vec::with_capacity(steps);
        let mut logps = Vec::with_capacity(steps);
        let mut entropy = 0.0;
        for (i, b) in intervals.iter().enumerate() {
            let cache = self.heads[i].forward_cached(&Self::head_input(emb, &action[..i]))?;
            let r = (cache.output[0], cache.output[1]);
            let (a, bb) = self.shapes_from_raw(i, r);
            let law = StepLaw::new(a, bb, *b)?;
            let x = action[i];
            if x < b.lo - crate::sampler::REPLAY_TOLERANCE || x > b.hi + crate::sampler::REPLAY_TOLERANCE {
                return Err(Error::OutOfSupport { x, lo: b.lo, hi: b.hi });
            }
            let x = x.clamp(b.lo, b.hi);
            logps.push(law.log_pdf(x)?);
            entropy += law.entropy();
            match law {
                StepLaw::Beta(d) => {
                    let (la, lb) = d.grad_log_pdf(x)?;
                    let (ea, eb) = d.grad_entropy();
                    step_grads.push((la, lb, ea, eb));
                    heads.push(Some(cache));
                }
                StepLaw::Forced(_) => {
                    step_grads.push((0.0, 0.0, 0.0, 0.0));
                    heads.push(None);
                }
            }
            laws.push(law);
            raw.push(r);
        }
        let log_prob = logps.iter().sum();
        Ok(PolicyTrace { encoder, heads, laws, raw, step_grads, log_prob, entropy })
    }

    /// Accumulates gradients of `d_logp * log_prob + d_entropy * entropy`
    /// into `grads` (layout of [`Self::params_flat`]).
    pub fn backward(&self, trace: &PolicyTrace, d_logp: f64, d_entropy: f64, grads: &mut [f64]) {
        let enc_len = self.encoder.param_count();
        let (g_enc, mut g_heads) = grads.split_at_mut(enc_len);
        let emb_dim = self.encoder.output_dim();
        let mut d_emb = vec![0.0; emb_dim];
        for (i, head) in self.heads.iter().enumerate() {
            let (g_head, rest) = g_heads.split_at_mut(head.param_count());
            g_heads = rest;
            let Some(cache) = &trace.heads[i] else { continue };
            let (la, lb, ea, eb) = trace.step_grads[i];
            let (da, db) = self.offsets[i];
            let (za, zb) = trace.raw[i];
            let d_out = [
                (d_logp * la + d_entropy * ea) * sigmoid(za + da),
                (d_logp * lb + d_entropy * eb) * sigmoid(zb + db),
            ];
            let d_in = head.backward(cache, &d_out, g_head);
            for (d, v) in d_emb.iter_mut().zip(&d_in[..emb_dim]) {
                *d += v;
            }
        }
        self.encoder.backward(&trace.encoder, &d_emb, g_enc);
    }

    pub fn param_count(&self) -> usize {
        self.encoder.param_count() + self.heads.iter().map(Mlp::param_count).sum::<usize>()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        v.extend_from_slice(self.encoder.params());
        for h in &self.heads {
            v.extend_from_slice(h.params());
        }
        v
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::DimensionMismatch(format!(
                "{} parameters for a policy with {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut off = 0;
        for m in std::iter::once(&mut self.encoder).chain(self.heads.iter_mut()) {
            let len = m.param_count();
            m.params_mut().copy_from_slice(&flat[off..off + len]);
            off += len;
        }
        Ok(())
    }
}

/// With a [`PolicyNet`] as provider the `state` argument is the embedding.
impl ShapeProvider for PolicyNet {
    fn shapes(&self, state: &[f64], prefix: &[f64], step: usize) -> (f64, f64) {
        self.head_shapes(state, prefix, step)
    }
}

/// Value network: two hidden ReLU layers and a scalar output.
pub fn value_net(state_dim: usize, hidden: usize, seed: u64) -> Result<Mlp> {
    let relu = Activation::Relu;
    Mlp::init(&[state_dim, hidden, hidden, 1], &[relu, relu, Activation::Identity], &mut rng_from_seed(seed), 1.0)
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to resume sampling: both networks, the de-bias offsets
/// (inside the policy) and the RNG state. `meta` carries caller context such
/// as the environment spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub policy: PolicyNet,
    pub value: Mlp,
    pub rng: Rng,
    #[serde(default)]
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(&fs::read_to_string(path)?)?;
        if c.version != CHECKPOINT_VERSION {
            return Err(Error::InvalidArgument(format!("unsupported checkpoint version {}", c.version)));
        }
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Polytope;

    #[test]
    fn identity_layer_passes_input_through() {
        let mut m = Mlp::zeros(&[3, 3], &[Activation::Identity]).unwrap();
        let (w, _) = m.layer_ranges(0);
        for i in 0..3 {
            m.params_mut()[w.start + i * 3 + i] = 1.0;
        }
        assert_eq!(m.forward(&[0.5, -2.0, 7.0]).unwrap(), vec![0.5, -2.0, 7.0]);
    }

    #[test]
    fn zero_weights_return_bias() {
        let mut m = Mlp::zeros(&[4, 2], &[Activation::Identity]).unwrap();
        let (_, b) = m.layer_ranges(0);
        m.params_mut()[b].copy_from_slice(&[0.25, -1.5]);
        assert_eq!(m.forward(&[9.0, 1.0, -3.0, 2.0]).unwrap(), vec![0.25, -1.5]);
        assert!(matches!(m.forward(&[1.0]), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let m = Mlp::init(&[3, 5, 2], &[Activation::Relu, Activation::Softplus], &mut rng_from_seed(1), 1.0).unwrap();
        let c = m.forward_cached(&[0.1, 0.2, 0.3]).unwrap();
        let mut g = vec![0.0; m.param_count()];
        let d_in = m.backward(&c, &[0.0, 0.0], &mut g);
        assert!(g.iter().all(|&v| v == 0.0));
        assert!(d_in.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn softplus_inverse() {
        for &y in &[1e-3, 0.5, 1.0, 6.0, 40.0] {
            assert!((softplus(softplus_inv(y)) - y).abs() < 1e-12 * y.max(1.0));
        }
    }

    #[test]
    fn init_reproduces_terms() {
        let p = Polytope::simplex(4).unwrap();
        let terms =
            DebiasTerms { polytope_hash: p.hash_hex(), k: 0, alphas: vec![1.0, 1.2, 0.9], betas: vec![3.0, 2.1, 1.0] };
        let net = PolicyNet::init(4, 5, &terms, 3).unwrap();
        let state = [0.3, -1.0, 2.0, 0.0, 0.7];
        let emb = net.embed(&state).unwrap();
        for (i, prefix) in [vec![], vec![0.2], vec![0.2, 0.3]].iter().enumerate() {
            let (a, b) = net.head_shapes(&emb, prefix, i);
            assert!((a / terms.alphas[i] - 1.0).abs() < 0.1);
            assert!((b / terms.betas[i] - 1.0).abs() < 0.1);
        }
        assert_eq!(net, PolicyNet::init(4, 5, &terms, 3).unwrap());
    }

    #[test]
    fn heads_are_independent() {
        let p = Polytope::simplex(4).unwrap();
        let mut net = PolicyNet::init(4, 2, &DebiasTerms::flat(&p), 8).unwrap();
        let emb = net.embed(&[1.0, 0.0]).unwrap();
        let before: Vec<_> = (0..3).map(|i| net.head_shapes(&emb, &vec![0.1; i], i)).collect();
        net.heads[1].params_mut().iter_mut().for_each(|v| *v += 0.3);
        let after: Vec<_> = (0..3).map(|i| net.head_shapes(&emb, &vec![0.1; i], i)).collect();
        assert_eq!(before[0], after[0]);
        assert_eq!(before[2], after[2]);
        assert_ne!(before[1], after[1]);
    }

    #[test]
    fn flat_params_round_trip() {
        let p = Polytope::simplex(3).unwrap();
        let mut net = PolicyNet::init(3, 2, &DebiasTerms::flat(&p), 1).unwrap();
        let mut flat = net.params_flat();
        flat[0] += 1.0;
        net.set_params_flat(&flat).unwrap();
        assert_eq!(net.params_flat(), flat);
        assert!(net.set_params_flat(&flat[1..]).is_err());
    }

    #[test]
    fn checkpoint_restores_identical_outputs() {
        let p = Polytope::simplex(3).unwrap();
        let net = PolicyNet::init(3, 2, &DebiasTerms::flat(&p), 4).unwrap();
        let value = value_net(2, 32, 5).unwrap();
        let ck = Checkpoint { version: CHECKPOINT_VERSION, policy: net, value, rng: rng_from_seed(6), meta: serde_json::json!({"n": 3}) };
        let path = std::env::temp_dir().join(format!("polyalloc-ck-{}.json", std::process::id()));
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        std::fs::remove_file(&path).unwrap();
        assert_eq!(back, ck);
        let s = [0.4, 0.6];
        assert_eq!(back.value.forward(&s).unwrap()[0].to_bits(), ck.value.forward(&s).unwrap()[0].to_bits());
    }
}
