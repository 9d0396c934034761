//! Demonstration sufficiency for learning from demonstration.
//!
//! A learner maintains a Bayesian IRL posterior over linear reward weights,
//! evaluates its MAP policy against posterior samples, and declares the
//! demonstrations sufficient once a high-confidence value-at-risk bound on
//! normalized regret (or on improvement over a baseline) clears a threshold.
//!
//! All numerics are generic over [`Scalar`]; the aliases below fix `f64`.

pub mod birl;
pub mod env;
pub mod error;
pub mod io;
pub mod mdp;
pub mod risk;
pub mod scalar;
pub mod seed;
pub mod sufficiency;

pub use error::{Error, Result};
pub use mdp::{Demonstration, StateAction};
pub use scalar::Scalar;
pub use seed::derive_seed;

pub type Mdp = mdp::TabularMdp<f64>;
pub type Weights = mdp::RewardWeights<f64>;
pub type Policy = mdp::Policy<f64>;
pub type ValueFunction = mdp::ValueFunction<f64>;
pub type Environment = env::Environment<f64>;
pub type PosteriorBatch = birl::PosteriorBatch<f64>;
pub type MetricSamples = risk::MetricSamples<f64>;
