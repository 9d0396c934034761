//! Tabular MDPs with state-only linear rewards, dynamic programming and the
//! Boltzmann demonstration likelihood.

pub(crate) mod dp;
mod likelihood;
mod solver;

pub use dp::{
    bellman_sweep, expected_return, greedy_actions, policy_evaluation, q_values,
    uniform_random_policy, value_iteration, DEFAULT_TOLERANCE,
};
pub use likelihood::{action_log_probs, demo_log_likelihood, log_likelihood_from_q};
pub use solver::{solve_optimal, OptimalSolution, PolicyEvaluator};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

const STOCHASTIC_TOL: f64 = 1e-9;

/// A finite MDP with sparse transitions and a per-state feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp<T> {
    num_states: usize,
    num_actions: usize,
    num_features: usize,
    /// Successor lists indexed by `state * num_actions + action`.
    transitions: Vec<Vec<(usize, T)>>,
    /// Row-major `num_states x num_features`.
    features: Vec<T>,
    discount: T,
    initial_dist: Vec<T>,
    terminal_states: Vec<usize>,
}

/// Raw parts used to build a [`TabularMdp`].
#[derive(Debug, Clone)]
pub struct MdpParts<T> {
    pub num_states: usize,
    pub num_actions: usize,
    /// `(state, action, next_state, probability)` triples. Missing
    /// `(state, action)` rows are an error; duplicate triples are summed.
    pub transitions: Vec<(usize, usize, usize, T)>,
    /// One feature row per state.
    pub features: Vec<Vec<T>>,
    pub discount: T,
    pub initial_dist: Vec<T>,
    pub terminal_states: Vec<usize>,
}

impl<T: Scalar> TabularMdp<T> {
    pub fn new(parts: MdpParts<T>) -> Result<Self> {
        let MdpParts {
            num_states,
            num_actions,
            transitions,
            features,
            discount,
            initial_dist,
            mut terminal_states,
        } = parts;
        if num_states == 0 || num_actions == 0 {
            return Err(Error::invalid("MDP needs at least one state and one action"));
        }
        if !(discount >= T::zero() && discount < T::one()) {
            return Err(Error::invalid(format!("discount {discount} outside [0, 1)")));
        }
        if features.len() != num_states {
            return Err(Error::invalid(format!(
                "expected {num_states} feature rows, got {}",
                features.len()
            )));
        }
        let num_features = features.first().map_or(0, Vec::len);
        if num_features == 0 {
            return Err(Error::invalid("feature rows must be non-empty"));
        }
        if features.iter().any(|row| row.len() != num_features) {
            return Err(Error::invalid("feature rows have inconsistent lengths"));
        }
        if features.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::invalid("non-finite feature value"));
        }

        let mut rows: Vec<Vec<(usize, T)>> = vec![Vec::new(); num_states * num_actions];
        for (s, a, next, p) in transitions {
            if s >= num_states || a >= num_actions || next >= num_states {
                return Err(Error::invalid(format!(
                    "transition ({s}, {a}, {next}) out of range"
                )));
            }
            if !(p >= T::zero()) || !p.is_finite() {
                return Err(Error::invalid(format!(
                    "transition ({s}, {a}, {next}) has invalid probability {p}"
                )));
            }
            if p == T::zero() {
                continue;
            }
            let row = &mut rows[s * num_actions + a];
            match row.iter_mut().find(|(n, _)| *n == next) {
                Some((_, q)) => *q += p,
                None => row.push((next, p)),
            }
        }
        let tol = T::of(STOCHASTIC_TOL);
        for (idx, row) in rows.iter_mut().enumerate() {
            row.sort_by_key(|(n, _)| *n);
            let total: T = row.iter().map(|(_, p)| *p).sum();
            if (total - T::one()).abs() > tol {
                return Err(Error::invalid(format!(
                    "transition row (state {}, action {}) sums to {total}",
                    idx / num_actions,
                    idx % num_actions
                )));
            }
        }

        if initial_dist.len() != num_states {
            return Err(Error::invalid("initial distribution has the wrong length"));
        }
        if initial_dist.iter().any(|p| !(*p >= T::zero())) {
            return Err(Error::invalid("initial distribution has negative entries"));
        }
        let total: T = initial_dist.iter().copied().sum();
        if (total - T::one()).abs() > tol {
            return Err(Error::invalid(format!("initial distribution sums to {total}")));
        }

        terminal_states.sort_unstable();
        terminal_states.dedup();
        for &t in &terminal_states {
            if t >= num_states {
                return Err(Error::invalid(format!("terminal state {t} out of range")));
            }
            for a in 0..num_actions {
                let row = &rows[t * num_actions + a];
                if row.len() != 1 || row[0].0 != t {
                    return Err(Error::invalid(format!(
                        "terminal state {t} must self-loop under action {a}"
                    )));
                }
            }
        }

        Ok(Self {
            num_states,
            num_actions,
            num_features,
            transitions: rows,
            features: features.into_iter().flatten().collect(),
            discount,
            initial_dist,
            terminal_states,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn discount(&self) -> T {
        self.discount
    }

    pub fn initial_dist(&self) -> &[T] {
        &self.initial_dist
    }

    pub fn terminal_states(&self) -> &[usize] {
        &self.terminal_states
    }

    pub fn is_terminal(&self, state: usize) -> bool {
        self.terminal_states.binary_search(&state).is_ok()
    }

    /// Successors of `(state, action)` as `(next_state, probability)`.
    #[inline]
    pub fn successors(&self, state: usize, action: usize) -> &[(usize, T)] {
        &self.transitions[state * self.num_actions + action]
    }

    pub fn transition_prob(&self, state: usize, action: usize, next: usize) -> T {
        self.successors(state, action)
            .iter()
            .find(|(n, _)| *n == next)
            .map_or(T::zero(), |(_, p)| *p)
    }

    /// All non-zero transitions as `(state, action, next_state, probability)`.
    pub fn transition_triples(&self) -> impl Iterator<Item = (usize, usize, usize, T)> + '_ {
        self.transitions.iter().enumerate().flat_map(move |(idx, row)| {
            let (s, a) = (idx / self.num_actions, idx % self.num_actions);
            row.iter().map(move |&(n, p)| (s, a, n, p))
        })
    }

    pub fn features(&self, state: usize) -> &[T] {
        let k = self.num_features;
        &self.features[state * k..(state + 1) * k]
    }

    /// Per-state rewards `R(s) = w . phi(s)`.
    pub fn rewards(&self, weights: &RewardWeights<T>) -> Result<Vec<T>> {
        if weights.len() != self.num_features {
            return Err(Error::invalid(format!(
                "reward weights have dimension {}, MDP has {} features",
                weights.len(),
                self.num_features
            )));
        }
        let w = weights.as_slice();
        let rewards: Vec<T> = self
            .features
            .chunks_exact(self.num_features)
            .map(|phi| phi.iter().zip(w).map(|(&f, &x)| f * x).sum())
            .collect();
        if rewards.iter().any(|r| !r.is_finite()) {
            return Err(Error::invalid("non-finite reward"));
        }
        Ok(rewards)
    }

    /// Same MDP with a different initial distribution.
    pub fn with_initial_dist(&self, initial_dist: Vec<T>) -> Result<Self> {
        TabularMdp::new(MdpParts {
            num_states: self.num_states,
            num_actions: self.num_actions,
            transitions: self.transition_triples().collect(),
            features: (0..self.num_states).map(|s| self.features(s).to_vec()).collect(),
            discount: self.discount,
            initial_dist,
            terminal_states: self.terminal_states.clone(),
        })
    }
}

/// Unit-norm feature weights defining `R(s) = w . phi(s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RewardWeights<T> {
    w: Vec<T>,
}

impl<T: Scalar> RewardWeights<T> {
    /// Normalizes `w` to unit L2 norm.
    pub fn new(w: Vec<T>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::invalid("reward weights must be non-empty"));
        }
        if w.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("non-finite reward weight"));
        }
        let norm = w.iter().map(|&x| x * x).sum::<T>().sqrt();
        if norm <= T::min_positive_value() {
            return Err(Error::invalid("reward weights have zero norm"));
        }
        Ok(Self {
            w: w.into_iter().map(|x| x / norm).collect(),
        })
    }

    pub fn as_slice(&self) -> &[T] {
        &self.w
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn norm(&self) -> T {
        self.w.iter().map(|&x| x * x).sum::<T>().sqrt()
    }

    /// Raw scaled copy. Not unit norm, so it is returned as a plain vector.
    pub fn scaled(&self, c: T) -> Vec<T> {
        self.w.iter().map(|&x| x * c).collect()
    }

    pub fn into_vec(self) -> Vec<T> {
        self.w
    }
}

/// Per-state distribution over actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy<T> {
    num_states: usize,
    num_actions: usize,
    /// Row-major `num_states x num_actions`.
    probs: Vec<T>,
}

impl<T: Scalar> Policy<T> {
    pub fn from_rows(rows: Vec<Vec<T>>) -> Result<Self> {
        let num_states = rows.len();
        let num_actions = rows.first().map_or(0, Vec::len);
        if num_states == 0 || num_actions == 0 {
            return Err(Error::invalid("policy must be non-empty"));
        }
        if rows.iter().any(|r| r.len() != num_actions) {
            return Err(Error::invalid("policy rows have inconsistent lengths"));
        }
        let tol = T::of(STOCHASTIC_TOL);
        for (s, row) in rows.iter().enumerate() {
            if row.iter().any(|p| !(*p >= T::zero())) {
                return Err(Error::invalid(format!("policy row {s} has negative entries")));
            }
            let total: T = row.iter().copied().sum();
            if (total - T::one()).abs() > tol {
                return Err(Error::invalid(format!("policy row {s} sums to {total}")));
            }
        }
        Ok(Self {
            num_states,
            num_actions,
            probs: rows.into_iter().flatten().collect(),
        })
    }

    /// One-hot policy taking `actions[s]` in state `s`.
    pub fn deterministic(actions: &[usize], num_actions: usize) -> Result<Self> {
        if actions.is_empty() || num_actions == 0 {
            return Err(Error::invalid("policy must be non-empty"));
        }
        let mut probs = vec![T::zero(); actions.len() * num_actions];
        for (s, &a) in actions.iter().enumerate() {
            if a >= num_actions {
                return Err(Error::invalid(format!("action {a} out of range in state {s}")));
            }
            probs[s * num_actions + a] = T::one();
        }
        Ok(Self {
            num_states: actions.len(),
            num_actions,
            probs,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn action_probs(&self, state: usize) -> &[T] {
        &self.probs[state * self.num_actions..(state + 1) * self.num_actions]
    }

    /// Most probable action per state, lowest index on ties.
    pub fn greedy_actions(&self) -> Vec<usize> {
        (0..self.num_states)
            .map(|s| {
                let row = self.action_probs(s);
                let mut best = 0;
                for a in 1..row.len() {
                    if row[a] > row[best] {
                        best = a;
                    }
                }
                best
            })
            .collect()
    }

    pub fn is_deterministic(&self) -> bool {
        self.probs.iter().all(|&p| p == T::zero() || p == T::one())
    }

    pub(crate) fn check_shape(&self, mdp: &TabularMdp<T>) -> Result<()> {
        if self.num_states != mdp.num_states() || self.num_actions != mdp.num_actions() {
            return Err(Error::invalid(format!(
                "policy shape {}x{} does not match MDP {}x{}",
                self.num_states,
                self.num_actions,
                mdp.num_states(),
                mdp.num_actions()
            )));
        }
        Ok(())
    }
}

/// Per-state values in units of discounted reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ValueFunction<T> {
    pub values: Vec<T>,
}

impl<T: Scalar> ValueFunction<T> {
    pub fn new(values: Vec<T>) -> Self {
        Self { values }
    }

    pub fn get(&self, state: usize) -> T {
        self.values[state]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// A demonstrated `(state, action)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StateAction {
    pub state: usize,
    pub action: usize,
}

impl StateAction {
    pub fn new(state: usize, action: usize) -> Self {
        Self { state, action }
    }
}

/// Ordered demonstration pairs. Repeats are allowed.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demonstration {
    pub pairs: Vec<StateAction>,
}

impl Demonstration {
    pub fn new(pairs: Vec<StateAction>) -> Self {
        Self { pairs }
    }

    pub fn from_pairs(pairs: &[(usize, usize)]) -> Self {
        Self {
            pairs: pairs.iter().map(|&(s, a)| StateAction::new(s, a)).collect(),
        }
    }

    pub fn push(&mut self, pair: StateAction) {
        self.pairs.push(pair);
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn unique_states(&self) -> usize {
        let mut states: Vec<usize> = self.pairs.iter().map(|p| p.state).collect();
        states.sort_unstable();
        states.dedup();
        states.len()
    }

    pub fn validate<T: Scalar>(&self, mdp: &TabularMdp<T>) -> Result<()> {
        for p in &self.pairs {
            if p.state >= mdp.num_states() || p.action >= mdp.num_actions() {
                return Err(Error::invalid(format!(
                    "demonstration pair ({}, {}) out of range",
                    p.state, p.action
                )));
            }
        }
        Ok(())
    }
}
