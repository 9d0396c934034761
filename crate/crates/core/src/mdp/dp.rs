use super::{Policy, RewardWeights, TabularMdp, ValueFunction};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Default sup-norm tolerance for value iteration and policy evaluation.
pub const DEFAULT_TOLERANCE: f64 = 1e-6;

/// One synchronous Bellman optimality backup `(TV)(s) = max_a Q(s, a)`.
pub fn bellman_sweep<T: Scalar>(mdp: &TabularMdp<T>, rewards: &[T], values: &[T]) -> Vec<T> {
    let gamma = mdp.discount();
    (0..mdp.num_states())
        .map(|s| {
            let mut best = T::neg_infinity();
            for a in 0..mdp.num_actions() {
                let q = rewards[s] + gamma * expected_next(mdp, s, a, values);
                if q > best {
                    best = q;
                }
            }
            best
        })
        .collect()
}

#[inline]
pub(crate) fn expected_next<T: Scalar>(mdp: &TabularMdp<T>, s: usize, a: usize, values: &[T]) -> T {
    mdp.successors(s, a)
        .iter()
        .map(|&(n, p)| p * values[n])
        .sum()
}

/// `Q(s, a) = R(s) + gamma * sum_s' T(s, a, s') V(s')`, row-major by state.
pub fn q_values<T: Scalar>(mdp: &TabularMdp<T>, rewards: &[T], values: &[T]) -> Vec<T> {
    let gamma = mdp.discount();
    let mut q = Vec::with_capacity(mdp.num_states() * mdp.num_actions());
    for s in 0..mdp.num_states() {
        for a in 0..mdp.num_actions() {
            q.push(rewards[s] + gamma * expected_next(mdp, s, a, values));
        }
    }
    q
}

/// Argmax action per state of a row-major Q table; lowest index wins ties.
pub fn greedy_actions<T: Scalar>(q: &[T], num_actions: usize) -> Vec<usize> {
    q.chunks_exact(num_actions)
        .map(|row| {
            let mut best = 0;
            for a in 1..num_actions {
                if row[a] > row[best] {
                    best = a;
                }
            }
            best
        })
        .collect()
}

fn sup_diff<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs())
        .fold(T::zero(), T::max)
}

/// Sweep-to-sweep change that guarantees the iterate is within `tol` of the
/// fixed point (`delta * gamma / (1 - gamma) <= tol`).
fn sweep_threshold<T: Scalar>(gamma: T, tol: T) -> T {
    if gamma == T::zero() {
        T::infinity()
    } else {
        tol * (T::one() - gamma) / gamma
    }
}

fn check_tol<T: Scalar>(tol: T) -> Result<()> {
    if tol > T::zero() && tol.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("tolerance must be positive, got {tol}")))
    }
}

/// Optimal values and the greedy deterministic policy.
///
/// Iterates synchronous Bellman backups from zero until the iterate is
/// provably within `tol` of `V*` in sup-norm, so the Bellman residual of the
/// returned values is at most `tol` as well.
pub fn value_iteration<T: Scalar>(
    mdp: &TabularMdp<T>,
    weights: &RewardWeights<T>,
    tol: T,
) -> Result<(ValueFunction<T>, Policy<T>)> {
    check_tol(tol)?;
    let rewards = mdp.rewards(weights)?;
    let values = value_iteration_rewards(mdp, &rewards, None, tol);
    let q = q_values(mdp, &rewards, &values);
    let policy = Policy::deterministic(&greedy_actions(&q, mdp.num_actions()), mdp.num_actions())?;
    Ok((ValueFunction::new(values), policy))
}

pub(crate) fn value_iteration_rewards<T: Scalar>(
    mdp: &TabularMdp<T>,
    rewards: &[T],
    init: Option<&[T]>,
    tol: T,
) -> Vec<T> {
    let threshold = sweep_threshold(mdp.discount(), tol);
    let mut values = init.map_or_else(|| vec![T::zero(); mdp.num_states()], <[T]>::to_vec);
    loop {
        let next = bellman_sweep(mdp, rewards, &values);
        let delta = sup_diff(&next, &values);
        values = next;
        if delta <= threshold {
            return values;
        }
    }
}

/// `V^pi` by iterative evaluation, within `tol` of the exact fixed point.
pub fn policy_evaluation<T: Scalar>(
    mdp: &TabularMdp<T>,
    policy: &Policy<T>,
    weights: &RewardWeights<T>,
    tol: T,
) -> Result<ValueFunction<T>> {
    check_tol(tol)?;
    policy.check_shape(mdp)?;
    let rewards = mdp.rewards(weights)?;
    let gamma = mdp.discount();
    let threshold = sweep_threshold(gamma, tol);
    let mut values = vec![T::zero(); mdp.num_states()];
    loop {
        let next: Vec<T> = (0..mdp.num_states())
            .map(|s| {
                let probs = policy.action_probs(s);
                let cont: T = (0..mdp.num_actions())
                    .filter(|&a| probs[a] > T::zero())
                    .map(|a| probs[a] * expected_next(mdp, s, a, &values))
                    .sum();
                rewards[s] + gamma * cont
            })
            .collect();
        let delta = sup_diff(&next, &values);
        values = next;
        if delta <= threshold {
            return Ok(ValueFunction::new(values));
        }
    }
}

/// Expected value under the initial-state distribution.
pub fn expected_return<T: Scalar>(values: &ValueFunction<T>, mdp: &TabularMdp<T>) -> Result<T> {
    if values.len() != mdp.num_states() {
        return Err(Error::invalid(format!(
            "value function has {} entries, MDP has {} states",
            values.len(),
            mdp.num_states()
        )));
    }
    Ok(dot(mdp.initial_dist(), &values.values))
}

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub fn uniform_random_policy<T: Scalar>(mdp: &TabularMdp<T>) -> Policy<T> {
    let p = T::one() / T::of(mdp.num_actions() as f64);
    Policy::from_rows(vec![vec![p; mdp.num_actions()]; mdp.num_states()])
        .expect("uniform rows are stochastic")
}
