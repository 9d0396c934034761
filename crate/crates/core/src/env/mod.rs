//! Randomized benchmark environments and simulated demonstrators.

mod ambiguity;
mod demonstrator;
mod driving;
mod gridworld;

pub use ambiguity::{ambiguity_demo_set, DemoKind};
pub use demonstrator::{Demonstrator, DemonstratorConfig, DemonstratorMode};
pub use driving::{generate_driving, DrivingConfig, DrivingFeature, DRIVING_ACTIONS};
pub use gridworld::{generate_gridworld, GridworldConfig, GRID_ACTIONS};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::mdp::{RewardWeights, TabularMdp};
use crate::scalar::Scalar;

/// How to draw an environment's states for display.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layout {
    Grid {
        rows: usize,
        cols: usize,
        /// Feature class of each cell, row-major.
        classes: Vec<usize>,
        goal: usize,
    },
    Road {
        road_length: usize,
        num_lanes: usize,
        /// Columns per road position: off-road, lanes..., off-road.
        columns: usize,
        /// Active feature indices per state.
        cell_features: Vec<Vec<usize>>,
    },
}

/// A generated MDP, the demonstrator's hidden reward and display metadata.
#[derive(Debug, Clone)]
pub struct Environment<T> {
    pub mdp: TabularMdp<T>,
    pub true_weights: RewardWeights<T>,
    pub layout: Layout,
    pub action_names: Vec<String>,
    pub feature_names: Vec<String>,
}

impl<T: Scalar> Environment<T> {
    pub fn into_parts(self) -> (TabularMdp<T>, RewardWeights<T>) {
        (self.mdp, self.true_weights)
    }
}

/// Uniform direction on the unit sphere in `dim` dimensions.
pub(crate) fn sample_sphere<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

pub(crate) fn to_scalar<T: Scalar>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::of(x)).collect()
}
