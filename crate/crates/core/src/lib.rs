//! Constraint-satisfying stochastic policies for allocation tasks.
//!
//! The action space of an allocation task is a convex polytope inside the
//! probability simplex. [`sampler`] draws allocations coordinate by
//! coordinate: a pair of linear programs ([`lp`]) yields the feasible
//! interval of the next coordinate, a four-parameter beta ([`beta`]) picks a
//! value inside it, and the polytope is reduced ([`polytope`]) before moving
//! on. Every draw is feasible by construction and every feasible point can
//! be drawn.
//!
//! [`debias`] fits per-step beta shapes so the untrained policy is close to
//! uniform over the polytope, [`nn`] holds the small hand-differentiated
//! networks, [`envs`] the two benchmark environments and [`ppo`] the trainer.

pub mod beta;
pub mod debias;
pub mod envs;
mod error;
pub mod lp;
pub mod nn;
pub mod polytope;
pub mod ppo;
pub mod sampler;
pub mod special;

pub use beta::{FourParamBeta, StepLaw};
pub use debias::DebiasTerms;
pub use error::{Error, Result};
pub use lp::CoordinateBounds;
pub use polytope::{Polytope, ReducedPolytope};
pub use sampler::{AllocationSample, EntityOrder, ShapeProvider};

/// Tolerance used when judging executed actions, matching the evaluation
/// tolerance for constraint violations.
pub const EVAL_TOLERANCE: f64 = 1e-3;

/// Tolerance used for internal algebra.
pub const ALGEBRA_TOLERANCE: f64 = 1e-9;

/// Deterministic RNG used throughout the crate.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Seeded RNG constructor.
pub fn rng_from_seed(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}
