//! Exact policy evaluation by dense LU and policy iteration.
//!
//! Posterior sampling and risk evaluation solve thousands of small MDPs that
//! differ only in their reward vector. For desk-scale state spaces a direct
//! solve of `(I - gamma P_pi) V = R` is both faster and more accurate than
//! iterating Bellman backups; larger MDPs fall back to the iterative routines.

use super::dp::{self, expected_next, greedy_actions, q_values, DEFAULT_TOLERANCE};
use super::{Policy, TabularMdp};
use crate::scalar::Scalar;

/// Above this many states the dense factorization is skipped.
const DENSE_LIMIT: usize = 400;
const MAX_POLICY_ITERATIONS: usize = 10_000;

/// LU factorization with partial pivoting of a square row-major matrix.
#[derive(Debug, Clone)]
struct Lu<T> {
    n: usize,
    lu: Vec<T>,
    pivots: Vec<usize>,
}

impl<T: Scalar> Lu<T> {
    fn factor(n: usize, mut a: Vec<T>) -> Self {
        let mut pivots = vec![0; n];
        for k in 0..n {
            let mut p = k;
            let mut max = a[k * n + k].abs();
            for i in k + 1..n {
                let v = a[i * n + k].abs();
                if v > max {
                    max = v;
                    p = i;
                }
            }
            pivots[k] = p;
            if p != k {
                for j in 0..n {
                    a.swap(k * n + j, p * n + j);
                }
            }
            let pivot = a[k * n + k];
            // I - gamma P is strictly diagonally dominant for gamma < 1.
            debug_assert!(pivot != T::zero());
            for i in k + 1..n {
                let factor = a[i * n + k] / pivot;
                if factor == T::zero() {
                    continue;
                }
                a[i * n + k] = factor;
                for j in k + 1..n {
                    let u = a[k * n + j];
                    a[i * n + j] -= factor * u;
                }
            }
        }
        Self { n, lu: a, pivots }
    }

    fn solve(&self, rhs: &[T]) -> Vec<T> {
        let n = self.n;
        let mut x = rhs.to_vec();
        for k in 0..n {
            x.swap(k, self.pivots[k]);
        }
        for i in 0..n {
            let mut sum = x[i];
            for j in 0..i {
                sum -= self.lu[i * n + j] * x[j];
            }
            x[i] = sum;
        }
        for i in (0..n).rev() {
            let mut sum = x[i];
            for j in i + 1..n {
                sum -= self.lu[i * n + j] * x[j];
            }
            x[i] = sum / self.lu[i * n + i];
        }
        x
    }
}

/// Builds `I - gamma * P_pi` for a policy given as per-state action weights.
fn evaluation_matrix<T: Scalar>(mdp: &TabularMdp<T>, weights: impl Fn(usize, usize) -> T) -> Vec<T> {
    let n = mdp.num_states();
    let gamma = mdp.discount();
    let mut m = vec![T::zero(); n * n];
    for s in 0..n {
        m[s * n + s] = T::one();
        for a in 0..mdp.num_actions() {
            let w = weights(s, a);
            if w == T::zero() {
                continue;
            }
            for &(next, p) in mdp.successors(s, a) {
                m[s * n + next] -= gamma * w * p;
            }
        }
    }
    m
}

/// Evaluates one fixed policy under many reward vectors.
///
/// The policy's linear system is factored once; each evaluation is then a
/// pair of triangular solves.
#[derive(Debug, Clone)]
pub struct PolicyEvaluator<T> {
    inner: EvaluatorKind<T>,
}

#[derive(Debug, Clone)]
enum EvaluatorKind<T> {
    Dense(Lu<T>),
    Iterative { mdp: TabularMdp<T>, policy: Policy<T> },
}

impl<T: Scalar> PolicyEvaluator<T> {
    pub fn new(mdp: &TabularMdp<T>, policy: &Policy<T>) -> crate::Result<Self> {
        policy.check_shape(mdp)?;
        let n = mdp.num_states();
        let inner = if n <= DENSE_LIMIT {
            let m = evaluation_matrix(mdp, |s, a| policy.action_probs(s)[a]);
            EvaluatorKind::Dense(Lu::factor(n, m))
        } else {
            EvaluatorKind::Iterative {
                mdp: mdp.clone(),
                policy: policy.clone(),
            }
        };
        Ok(Self { inner })
    }

    /// `V^pi` for per-state rewards.
    pub fn evaluate(&self, rewards: &[T]) -> Vec<T> {
        match &self.inner {
            EvaluatorKind::Dense(lu) => lu.solve(rewards),
            EvaluatorKind::Iterative { mdp, policy } => {
                iterative_evaluation(mdp, rewards, |s, a| policy.action_probs(s)[a])
            }
        }
    }
}

fn iterative_evaluation<T: Scalar>(
    mdp: &TabularMdp<T>,
    rewards: &[T],
    weights: impl Fn(usize, usize) -> T,
) -> Vec<T> {
    let gamma = mdp.discount();
    let tol = T::of(DEFAULT_TOLERANCE);
    let threshold = if gamma == T::zero() {
        T::infinity()
    } else {
        tol * (T::one() - gamma) / gamma
    };
    let mut values = vec![T::zero(); mdp.num_states()];
    loop {
        let next: Vec<T> = (0..mdp.num_states())
            .map(|s| {
                let cont: T = (0..mdp.num_actions())
                    .map(|a| (a, weights(s, a)))
                    .filter(|(_, w)| *w > T::zero())
                    .map(|(a, w)| w * expected_next(mdp, s, a, &values))
                    .sum();
                rewards[s] + gamma * cont
            })
            .collect();
        let delta = next
            .iter()
            .zip(&values)
            .map(|(&x, &y)| (x - y).abs())
            .fold(T::zero(), T::max);
        values = next;
        if delta <= threshold {
            return values;
        }
    }
}

/// Optimal values, Q table and greedy actions for one reward vector.
#[derive(Debug, Clone)]
pub struct OptimalSolution<T> {
    pub values: Vec<T>,
    /// Row-major `num_states x num_actions`.
    pub q: Vec<T>,
    pub actions: Vec<usize>,
}

/// Solves for `V*` under per-state `rewards`.
///
/// Small MDPs use policy iteration with exact evaluation, optionally
/// warm-started from `warm_actions`; large ones use value iteration at the
/// default tolerance. Greedy actions break ties toward the lowest index.
pub fn solve_optimal<T: Scalar>(
    mdp: &TabularMdp<T>,
    rewards: &[T],
    warm_actions: Option<&[usize]>,
) -> OptimalSolution<T> {
    let n = mdp.num_states();
    let num_actions = mdp.num_actions();
    if n > DENSE_LIMIT {
        let values = dp::value_iteration_rewards(mdp, rewards, None, T::of(DEFAULT_TOLERANCE));
        let q = q_values(mdp, rewards, &values);
        let actions = greedy_actions(&q, num_actions);
        return OptimalSolution { values, q, actions };
    }

    let mut actions = match warm_actions {
        Some(a) if a.len() == n => a.to_vec(),
        _ => vec![0; n],
    };
    let slack = T::epsilon() * T::of(64.0);
    for _ in 0..MAX_POLICY_ITERATIONS {
        let m = evaluation_matrix(mdp, |s, a| if actions[s] == a { T::one() } else { T::zero() });
        let values = Lu::factor(n, m).solve(rewards);
        let q = q_values(mdp, rewards, &values);
        let greedy = greedy_actions(&q, num_actions);
        let mut changed = false;
        for s in 0..n {
            let current = q[s * num_actions + actions[s]];
            let best = q[s * num_actions + greedy[s]];
            // Switch only on a clear improvement so rounding noise cannot cycle.
            if best - current > slack * (T::one() + best.abs()) {
                actions[s] = greedy[s];
                changed = true;
            }
        }
        if !changed {
            return OptimalSolution {
                values,
                q,
                actions: greedy,
            };
        }
    }
    unreachable!("policy iteration terminates in finitely many steps")
}
