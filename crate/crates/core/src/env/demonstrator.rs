use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{action_log_probs, solve_optimal, RewardWeights, StateAction, TabularMdp};
use crate::scalar::Scalar;
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DemonstratorMode {
    /// Always the greedy optimal action (lowest index on ties).
    Optimal,
    /// Softmax over optimal Q-values with inverse temperature `beta`.
    Boltzmann { beta: f64 },
    /// Optimal, except with probability `noise_fraction` a uniformly random
    /// suboptimal action.
    Noisy { noise_fraction: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemonstratorConfig {
    #[serde(flatten)]
    pub mode: DemonstratorMode,
    #[serde(default)]
    pub seed: u64,
}

impl DemonstratorConfig {
    pub fn optimal(seed: u64) -> Self {
        Self {
            mode: DemonstratorMode::Optimal,
            seed,
        }
    }

    pub fn noisy(noise_fraction: f64, seed: u64) -> Self {
        Self {
            mode: DemonstratorMode::Noisy { noise_fraction },
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        match self.mode {
            DemonstratorMode::Optimal => Ok(()),
            DemonstratorMode::Boltzmann { beta } if beta >= 0.0 && beta.is_finite() => Ok(()),
            DemonstratorMode::Boltzmann { beta } => {
                Err(Error::invalid(format!("demonstrator beta must be >= 0, got {beta}")))
            }
            DemonstratorMode::Noisy { noise_fraction } if (0.0..1.0).contains(&noise_fraction) => Ok(()),
            DemonstratorMode::Noisy { noise_fraction } => Err(Error::invalid(format!(
                "noise fraction must lie in [0, 1), got {noise_fraction}"
            ))),
        }
    }
}

/// Simulated teacher that knows the true reward.
///
/// Passive use draws states from a seeded visit order without replacement;
/// active use answers queries at arbitrary states. Holds private cursor and
/// RNG state, so one instance serves one session.
#[derive(Debug, Clone)]
pub struct Demonstrator<T> {
    q: Vec<T>,
    num_actions: usize,
    optimal: Vec<usize>,
    mode: DemonstratorMode,
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl<T: Scalar> Demonstrator<T> {
    pub fn new(
        mdp: &TabularMdp<T>,
        true_weights: &RewardWeights<T>,
        cfg: &DemonstratorConfig,
        visit_order: Option<Vec<usize>>,
    ) -> Result<Self> {
        cfg.validate()?;
        let rewards = mdp.rewards(true_weights)?;
        let solution = solve_optimal(mdp, &rewards, None);
        let order = match visit_order {
            Some(order) => {
                if let Some(&s) = order.iter().find(|&&s| s >= mdp.num_states()) {
                    return Err(Error::invalid(format!("visit order state {s} out of range")));
                }
                order
            }
            None => {
                let mut order: Vec<usize> = (0..mdp.num_states()).collect();
                order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0)));
                order
            }
        };
        Ok(Self {
            q: solution.q,
            num_actions: mdp.num_actions(),
            optimal: solution.actions,
            mode: cfg.mode,
            order,
            cursor: 0,
            rng: ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1)),
        })
    }

    /// Next pair of the passive stream.
    pub fn next_pair(&mut self) -> Result<StateAction> {
        let state = *self.order.get(self.cursor).ok_or(Error::StreamExhausted)?;
        self.cursor += 1;
        Ok(self.respond(state))
    }

    /// Demonstrates an action at a requested state.
    pub fn respond(&mut self, state: usize) -> StateAction {
        let action = match self.mode {
            DemonstratorMode::Optimal => self.optimal[state],
            DemonstratorMode::Boltzmann { beta } => {
                let log_p = action_log_probs(self.q_row(state), T::of(beta));
                let u: f64 = self.rng.random();
                let mut acc = 0.0;
                let mut chosen = self.num_actions - 1;
                for (a, lp) in log_p.iter().enumerate() {
                    acc += lp.as_f64().exp();
                    if u < acc {
                        chosen = a;
                        break;
                    }
                }
                chosen
            }
            DemonstratorMode::Noisy { noise_fraction } => {
                let u: f64 = self.rng.random();
                let suboptimal = self.suboptimal_actions(state);
                if u < noise_fraction && !suboptimal.is_empty() {
                    suboptimal[self.rng.random_range(0..suboptimal.len())]
                } else {
                    self.optimal[state]
                }
            }
        };
        StateAction::new(state, action)
    }

    pub fn remaining(&self) -> usize {
        self.order.len() - self.cursor
    }

    pub fn optimal_action(&self, state: usize) -> usize {
        self.optimal[state]
    }

    pub fn is_optimal(&self, pair: StateAction) -> bool {
        let row = self.q_row(pair.state);
        let best = row[self.optimal[pair.state]];
        best - row[pair.action] <= Self::slack(best)
    }

    fn q_row(&self, state: usize) -> &[T] {
        &self.q[state * self.num_actions..(state + 1) * self.num_actions]
    }

    fn slack(best: T) -> T {
        T::of(1e-9) * (T::one() + best.abs())
    }

    fn suboptimal_actions(&self, state: usize) -> Vec<usize> {
        let row = self.q_row(state);
        let best = row[self.optimal[state]];
        (0..self.num_actions)
            .filter(|&a| best - row[a] > Self::slack(best))
            .collect()
    }
}

impl<T: Scalar> Iterator for Demonstrator<T> {
    type Item = StateAction;

    fn next(&mut self) -> Option<StateAction> {
        self.next_pair().ok()
    }
}
