//! Benchmark environments over polytope action spaces.
//!
//! Actions are given in entity order. [`Env::step`] refuses any action whose
//! largest constraint violation exceeds [`VIOLATION_TOLERANCE`].

mod compute;
mod synthetic;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use compute::{ComputeConfig, ComputeEnv, Job, SERVER_SPEEDS, USER_JOBS};
pub use synthetic::SyntheticEnv;

use crate::polytope::{gen_hull_polytope, gen_random_halfspaces};
use crate::{Error, Polytope, Result};

/// Largest constraint violation an executed action may have.
pub const VIOLATION_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

pub trait Env: Send {
    /// Action space in entity order.
    fn polytope(&self) -> &Polytope;

    fn state_dim(&self) -> usize;

    /// Starts a new episode. Stochastic environments reseed from `seed`.
    fn reset(&mut self, seed: u64) -> Vec<f64>;

    fn observe(&self) -> Vec<f64>;

    /// Applies an action without the feasibility check.
    fn transition(&mut self, action: &[f64]) -> Transition;

    fn step(&mut self, action: &[f64]) -> Result<Transition> {
        let violation = self.polytope().max_violation(action)?;
        if violation > VIOLATION_TOLERANCE || !violation.is_finite() {
            return Err(Error::InfeasibleAction { violation });
        }
        Ok(self.transition(action))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Synthetic,
    Compute,
}

/// Source of the constraint rows on top of the simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ConstraintSpec {
    Simplex,
    Random { k: usize, seed: u64 },
    Hull { points: usize, seed: u64 },
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub env: EnvKind,
    pub n: usize,
    pub constraints: ConstraintSpec,
    pub seed: u64,
    /// Compute env only: deadline as a multiple of the fastest server's time
    /// for the mean job.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deadline_factor: Option<f64>,
    /// Compute env only: decisions per episode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
}

impl EnvSpec {
    pub fn synthetic(n: usize, constraints: ConstraintSpec, seed: u64) -> Self {
        EnvSpec { env: EnvKind::Synthetic, n, constraints, seed, deadline_factor: None, horizon: None }
    }

    /// Nine servers with five random constraints drawn from seed 1.
    pub fn compute() -> Self {
        EnvSpec {
            env: EnvKind::Compute,
            n: SERVER_SPEEDS.len(),
            constraints: ConstraintSpec::Random { k: 5, seed: 1 },
            seed: 1,
            deadline_factor: None,
            horizon: None,
        }
    }

    pub fn polytope(&self) -> Result<Polytope> {
        let p = match &self.constraints {
            ConstraintSpec::Simplex => Polytope::simplex(self.n)?,
            ConstraintSpec::Random { k, seed } => gen_random_halfspaces(self.n, *k, *seed)?,
            ConstraintSpec::Hull { points, seed } => gen_hull_polytope(self.n, *points, *seed)?,
            ConstraintSpec::File { path } => Polytope::load(path)?,
        };
        if p.n() != self.n {
            return Err(Error::DimensionMismatch(format!("polytope has {} entities, spec says {}", p.n(), self.n)));
        }
        Ok(p)
    }

    pub fn build(&self) -> Result<Box<dyn Env>> {
        let p = self.polytope()?;
        Ok(match self.env {
            EnvKind::Synthetic => Box::new(SyntheticEnv::new(p, self.seed)?),
            EnvKind::Compute => {
                let mut cfg = ComputeConfig::default();
                if let Some(f) = self.deadline_factor {
                    cfg.deadline_factor = f;
                }
                if let Some(h) = self.horizon {
                    cfg.horizon = h;
                }
                Box::new(ComputeEnv::new(p, cfg, self.seed)?)
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_json_shape() {
        let s = EnvSpec::synthetic(3, ConstraintSpec::Random { k: 2, seed: 4 }, 1);
        let v: serde_json::Value = serde_json::to_value(&s).unwrap();
        assert_eq!(v["env"], "synthetic");
        assert_eq!(v["constraints"]["kind"], "random");
        assert_eq!(serde_json::from_value::<EnvSpec>(v).unwrap(), s);
        let c: EnvSpec =
            serde_json::from_str(r#"{"env":"compute","n":9,"constraints":{"kind":"simplex"},"seed":3}"#).unwrap();
        assert_eq!(c.env, EnvKind::Compute);
        assert_eq!(c.horizon, None);
    }

    #[test]
    fn step_rejects_infeasible_actions() {
        let mut env = EnvSpec::synthetic(3, ConstraintSpec::Simplex, 1).build().unwrap();
        env.reset(0);
        assert!(matches!(env.step(&[0.6, 0.6, 0.0]), Err(Error::InfeasibleAction { .. })));
        assert!(matches!(env.step(&[0.5, 0.5]), Err(Error::DimensionMismatch(_))));
        // inside the tolerance
        assert!(env.step(&[0.5005, 0.5, 0.0]).is_ok());
    }

    #[test]
    fn spec_dimension_checked() {
        let s = EnvSpec { n: 4, ..EnvSpec::compute() };
        assert!(s.build().is_err());
    }
}
