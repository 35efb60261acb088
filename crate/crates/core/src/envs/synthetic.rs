use super::{Env, Transition};
use crate::nn::{Activation, Mlp};
use crate::{rng_from_seed, Polytope, Result};

const EPISODE_LENGTH: usize = 2;

/// Two-state episodes whose reward is a frozen random MLP of the state
/// index and the action.
#[derive(Debug, Clone)]
pub struct SyntheticEnv {
    polytope: Polytope,
    reward_net: Mlp,
    t: usize,
}

impl SyntheticEnv {
    pub fn new(polytope: Polytope, seed: u64) -> Result<Self> {
        let relu = Activation::Relu;
        let dims = [polytope.n() + 1, 32, 16, 1];
        let reward_net = Mlp::init_uniform(&dims, &[relu, relu, Activation::Identity], &mut rng_from_seed(seed))?;
        Ok(SyntheticEnv { polytope, reward_net, t: 0 })
    }

    pub fn reward_net(&self) -> &Mlp {
        &self.reward_net
    }

    /// Current state index, 0 or 1.
    pub fn state_index(&self) -> usize {
        self.t
    }

    pub fn reward(&self, state: usize, action: &[f64]) -> f64 {
        let mut x = Vec::with_capacity(action.len() + 1);
        x.push(state as f64);
        x.extend_from_slice(action);
        self.reward_net.forward(&x).expect("reward net input width")[0]
    }

    /// Best return over a grid of step `1/resolution` on the feasible set,
    /// with the argmax for each state.
    pub fn grid_optimum(&self, resolution: usize) -> (f64, [Vec<f64>; 2]) {
        let n = self.polytope.n();
        let mut best = [(f64::NEG_INFINITY, Vec::new()), (f64::NEG_INFINITY, Vec::new())];
        let mut counts = vec![0usize; n];
        loop {
            let used: usize = counts[..n - 1].iter().sum();
            if used <= resolution {
                counts[n - 1] = resolution - used;
                let a: Vec<f64> = counts.iter().map(|&c| c as f64 / resolution as f64).collect();
                if self.polytope.contains(&a, 1e-12) {
                    for (s, b) in best.iter_mut().enumerate() {
                        let r = self.reward(s, &a);
                        if r > b.0 {
                            *b = (r, a.clone());
                        }
                    }
                }
            }
            // odometer over the first n - 1 counts
            let mut i = 0;
            loop {
                if i == n - 1 {
                    let [b0, b1] = best;
                    return (b0.0 + b1.0, [b0.1, b1.1]);
                }
                counts[i] += 1;
                if counts[..n - 1].iter().sum::<usize>() <= resolution {
                    break;
                }
                counts[i] = 0;
                i += 1;
            }
        }
    }
}

impl Env for SyntheticEnv {
    fn polytope(&self) -> &Polytope {
        &self.polytope
    }

    fn state_dim(&self) -> usize {
        EPISODE_LENGTH
    }

    fn reset(&mut self, _seed: u64) -> Vec<f64> {
        self.t = 0;
        self.observe()
    }

    fn observe(&self) -> Vec<f64> {
        let mut s = vec![0.0; EPISODE_LENGTH];
        s[self.t.min(EPISODE_LENGTH - 1)] = 1.0;
        s
    }

    fn transition(&mut self, action: &[f64]) -> Transition {
        let reward = self.reward(self.t, action);
        self.t += 1;
        let done = self.t >= EPISODE_LENGTH;
        if done {
            self.t = 0;
        }
        Transition { state: self.observe(), reward, done }
    }
}
