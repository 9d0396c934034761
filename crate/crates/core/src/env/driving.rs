use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{sample_sphere, to_scalar, Environment, Layout};
use crate::error::{Error, Result};
use crate::mdp::{MdpParts, RewardWeights, TabularMdp};
use crate::scalar::Scalar;

pub const DRIVING_ACTIONS: [&str; 3] = ["straight", "left", "right"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DrivingConfig {
    pub road_length: usize,
    pub num_lanes: usize,
    /// Probability that a lane cell holds a stationary car.
    pub obstacle_density: f64,
    /// Probability that a car-free lane cell holds a dirt patch.
    pub dirt_density: f64,
    pub discount: f64,
    pub seed: u64,
}

impl Default for DrivingConfig {
    fn default() -> Self {
        Self {
            road_length: 8,
            num_lanes: 3,
            obstacle_density: 0.15,
            dirt_density: 0.15,
            discount: 0.95,
            seed: 0,
        }
    }
}

/// Feature layout: one indicator per lane, then collision, dirt, off-road.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DrivingFeature {
    Lane(usize),
    Collision,
    Dirt,
    OffRoad,
}

impl DrivingFeature {
    pub fn index(self, num_lanes: usize) -> usize {
        match self {
            DrivingFeature::Lane(i) => i,
            DrivingFeature::Collision => num_lanes,
            DrivingFeature::Dirt => num_lanes + 1,
            DrivingFeature::OffRoad => num_lanes + 2,
        }
    }
}

impl DrivingConfig {
    fn validate(&self) -> Result<()> {
        if self.road_length < 2 {
            return Err(Error::invalid("road_length must be at least 2"));
        }
        if self.num_lanes < 1 {
            return Err(Error::invalid("need at least one lane"));
        }
        for (name, d) in [("obstacle_density", self.obstacle_density), ("dirt_density", self.dirt_density)] {
            if !(0.0..=1.0).contains(&d) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1], got {d}")));
            }
        }
        if !(0.0..1.0).contains(&self.discount) {
            return Err(Error::invalid("discount must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Circular road with lanes flanked by off-road strips, static cars and
/// dirt patches. Every action advances one position; the last position
/// wraps to the first.
pub fn generate_driving<T: Scalar>(cfg: &DrivingConfig) -> Result<Environment<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let lanes = cfg.num_lanes;
    let columns = lanes + 2;
    let n = cfg.road_length * columns;
    let k = lanes + 3;

    let mut cell_features = Vec::with_capacity(n);
    for _pos in 0..cfg.road_length {
        for col in 0..columns {
            let mut active = Vec::new();
            if col == 0 || col == columns - 1 {
                active.push(DrivingFeature::OffRoad.index(lanes));
            } else {
                active.push(DrivingFeature::Lane(col - 1).index(lanes));
                // Both draws happen for every lane cell so layouts stay
                // aligned across densities.
                let car = rng.random::<f64>() < cfg.obstacle_density;
                let dirt = rng.random::<f64>() < cfg.dirt_density;
                if car {
                    active.push(DrivingFeature::Collision.index(lanes));
                } else if dirt {
                    active.push(DrivingFeature::Dirt.index(lanes));
                }
            }
            cell_features.push(active);
        }
    }

    let collision = DrivingFeature::Collision.index(lanes);
    let weights = loop {
        let mut w = sample_sphere(&mut rng, k);
        if w[collision] != 0.0 {
            w[collision] = -w[collision].abs();
            break w;
        }
    };

    let mut transitions = Vec::with_capacity(n * 3);
    for s in 0..n {
        let (pos, col) = (s / columns, s % columns);
        let next_pos = (pos + 1) % cfg.road_length;
        for (a, shift) in [0_isize, -1, 1].into_iter().enumerate() {
            let next_col = (col as isize + shift).clamp(0, columns as isize - 1) as usize;
            transitions.push((s, a, next_pos * columns + next_col, T::one()));
        }
    }
    let features = cell_features
        .iter()
        .map(|active| (0..k).map(|j| if active.contains(&j) { T::one() } else { T::zero() }).collect())
        .collect();
    let uniform = T::one() / T::of(n as f64);
    let mdp = TabularMdp::new(MdpParts {
        num_states: n,
        num_actions: 3,
        transitions,
        features,
        discount: T::of(cfg.discount),
        initial_dist: vec![uniform; n],
        terminal_states: vec![],
    })?;

    let mut feature_names: Vec<String> = (0..lanes).map(|i| format!("lane_{i}")).collect();
    feature_names.extend(["collision", "dirt", "off_road"].map(String::from));
    Ok(Environment {
        mdp,
        true_weights: RewardWeights::new(to_scalar(&weights))?,
        layout: Layout::Road {
            road_length: cfg.road_length,
            num_lanes: lanes,
            columns,
            cell_features,
        },
        action_names: DRIVING_ACTIONS.iter().map(|s| s.to_string()).collect(),
        feature_names,
    })
}
