use super::solver::solve_optimal;
use super::{Demonstration, RewardWeights, TabularMdp};
use crate::error::{Error, Result};
use crate::scalar::{log_sum_exp, Scalar};

/// Boltzmann log-probabilities `beta Q(s,a) - log sum_b exp(beta Q(s,b))`
/// for one row of Q-values.
pub fn action_log_probs<T: Scalar>(q_row: &[T], beta: T) -> Vec<T> {
    let scaled: Vec<T> = q_row.iter().map(|&q| beta * q).collect();
    let lse = log_sum_exp(&scaled);
    scaled.into_iter().map(|x| x - lse).collect()
}

/// Log-likelihood of `demos` given a row-major optimal Q table.
pub fn log_likelihood_from_q<T: Scalar>(
    q: &[T],
    num_actions: usize,
    demos: &Demonstration,
    beta: T,
) -> T {
    let mut total = T::zero();
    let mut scaled = vec![T::zero(); num_actions];
    for pair in &demos.pairs {
        let row = &q[pair.state * num_actions..(pair.state + 1) * num_actions];
        for (dst, &x) in scaled.iter_mut().zip(row) {
            *dst = beta * x;
        }
        total += scaled[pair.action] - log_sum_exp(&scaled);
    }
    total
}

/// Boltzmann-rational log-likelihood of the demonstrations under `weights`.
pub fn demo_log_likelihood<T: Scalar>(
    mdp: &TabularMdp<T>,
    demos: &Demonstration,
    weights: &RewardWeights<T>,
    beta: T,
) -> Result<T> {
    if !(beta >= T::zero()) || !beta.is_finite() {
        return Err(Error::invalid(format!("beta must be non-negative, got {beta}")));
    }
    demos.validate(mdp)?;
    let rewards = mdp.rewards(weights)?;
    let solution = solve_optimal(mdp, &rewards, None);
    Ok(log_likelihood_from_q(&solution.q, mdp.num_actions(), demos, beta))
}
