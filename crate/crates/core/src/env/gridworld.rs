use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{sample_sphere, to_scalar, Environment, Layout};
use crate::error::{Error, Result};
use crate::mdp::{MdpParts, RewardWeights, TabularMdp};
use crate::scalar::Scalar;

/// Action order of every generated gridworld.
pub const GRID_ACTIONS: [&str; 4] = ["up", "down", "left", "right"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridworldConfig {
    pub rows: usize,
    pub cols: usize,
    /// Total feature dimension; the last feature marks the goal cell and the
    /// others are terrain classes.
    pub num_features: usize,
    pub goal_state: Option<usize>,
    pub discount: f64,
    pub seed: u64,
}

impl Default for GridworldConfig {
    fn default() -> Self {
        Self {
            rows: 5,
            cols: 5,
            num_features: 4,
            goal_state: None,
            discount: 0.95,
            seed: 0,
        }
    }
}

impl GridworldConfig {
    pub fn new(rows: usize, cols: usize, num_features: usize, seed: u64) -> Self {
        Self {
            rows,
            cols,
            num_features,
            seed,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        let cells = self.rows * self.cols;
        if self.rows == 0 || self.cols == 0 || cells < 2 {
            return Err(Error::invalid("gridworld needs at least two cells"));
        }
        if self.num_features < 2 {
            return Err(Error::invalid("gridworld needs at least two features"));
        }
        if self.num_features > cells {
            return Err(Error::invalid(format!(
                "{} features cannot fit in {cells} cells",
                self.num_features
            )));
        }
        if let Some(g) = self.goal_state {
            if g >= cells {
                return Err(Error::invalid(format!("goal state {g} outside the grid")));
            }
        }
        if !(0.0..1.0).contains(&self.discount) {
            return Err(Error::invalid("discount must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Random `rows x cols` gridworld with one-hot terrain features and an
/// absorbing goal whose feature weight strictly dominates.
pub fn generate_gridworld<T: Scalar>(cfg: &GridworldConfig) -> Result<Environment<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (rows, cols, k) = (cfg.rows, cfg.cols, cfg.num_features);
    let n = rows * cols;
    let goal_class = k - 1;

    let goal = cfg.goal_state.unwrap_or_else(|| rng.random_range(0..n));
    let classes: Vec<usize> = (0..n)
        .map(|s| {
            let c = rng.random_range(0..goal_class);
            if s == goal {
                goal_class
            } else {
                c
            }
        })
        .collect();

    let weights = loop {
        let mut w = sample_sphere(&mut rng, k);
        let (argmax, _) = w
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &x)| if x > acc.1 { (i, x) } else { acc });
        w.swap(argmax, goal_class);
        let strictly_max = w[..goal_class].iter().all(|&x| x < w[goal_class]);
        if strictly_max {
            break w;
        }
    };

    let mut transitions = Vec::with_capacity(n * 4);
    for s in 0..n {
        let (r, c) = (s / cols, s % cols);
        for a in 0..4 {
            let next = if s == goal {
                s
            } else {
                match a {
                    0 if r > 0 => s - cols,
                    1 if r + 1 < rows => s + cols,
                    2 if c > 0 => s - 1,
                    3 if c + 1 < cols => s + 1,
                    _ => s,
                }
            };
            transitions.push((s, a, next, T::one()));
        }
    }
    let features = classes
        .iter()
        .map(|&c| (0..k).map(|j| if j == c { T::one() } else { T::zero() }).collect())
        .collect();
    let uniform = T::one() / T::of(n as f64);
    let mdp = TabularMdp::new(MdpParts {
        num_states: n,
        num_actions: 4,
        transitions,
        features,
        discount: T::of(cfg.discount),
        initial_dist: vec![uniform; n],
        terminal_states: vec![goal],
    })?;

    let mut feature_names: Vec<String> = (0..goal_class).map(|i| format!("terrain_{i}")).collect();
    feature_names.push("goal".into());
    Ok(Environment {
        mdp,
        true_weights: RewardWeights::new(to_scalar(&weights))?,
        layout: Layout::Grid {
            rows,
            cols,
            classes,
            goal,
        },
        action_names: GRID_ACTIONS.iter().map(|s| s.to_string()).collect(),
        feature_names,
    })
}
