//! Hand-picked demonstration sets that are deliberately uninformative or
//! informative about the reward.
//!
//! A state's informativeness is scored by how many distinct feature vectors
//! the optimal policy passes through when started there: a demonstration
//! whose consequences touch many features constrains many weights.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{solve_optimal, Demonstration, RewardWeights, StateAction, TabularMdp};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemoKind {
    /// `n` copies of one optimal pair from the least informative state.
    Ambiguous,
    /// Optimal pairs from the `n` most informative states.
    Informative,
}

pub fn ambiguity_demo_set<T: Scalar>(
    mdp: &TabularMdp<T>,
    true_weights: &RewardWeights<T>,
    kind: DemoKind,
    count: usize,
) -> Result<Demonstration> {
    if count == 0 {
        return Err(Error::invalid("demo set must hold at least one pair"));
    }
    let rewards = mdp.rewards(true_weights)?;
    let optimal = solve_optimal(mdp, &rewards, None).actions;
    let candidates: Vec<usize> = (0..mdp.num_states()).filter(|&s| !mdp.is_terminal(s)).collect();
    if candidates.is_empty() {
        return Err(Error::invalid("every state is terminal"));
    }
    let diversity: Vec<usize> = (0..mdp.num_states()).map(|s| path_diversity(mdp, &optimal, s)).collect();

    let pairs = match kind {
        DemoKind::Informative => {
            let mut ranked = candidates;
            ranked.sort_by(|&a, &b| diversity[b].cmp(&diversity[a]).then(a.cmp(&b)));
            ranked
                .into_iter()
                .take(count)
                .map(|s| StateAction::new(s, optimal[s]))
                .collect()
        }
        DemoKind::Ambiguous => {
            let distance = distance_to_feature_change(mdp);
            let state = candidates
                .into_iter()
                .min_by(|&a, &b| {
                    diversity[a]
                        .cmp(&diversity[b])
                        .then(distance[b].cmp(&distance[a]))
                        .then(a.cmp(&b))
                })
                .expect("candidates are non-empty");
            vec![StateAction::new(state, optimal[state]); count]
        }
    };
    Ok(Demonstration::new(pairs))
}

/// Distinct feature vectors along the most likely optimal path from `start`.
fn path_diversity<T: Scalar>(mdp: &TabularMdp<T>, optimal: &[usize], start: usize) -> usize {
    let mut visited = vec![false; mdp.num_states()];
    let mut seen: Vec<&[T]> = Vec::new();
    let mut s = start;
    while !visited[s] {
        visited[s] = true;
        let phi = mdp.features(s);
        if !seen.contains(&phi) {
            seen.push(phi);
        }
        s = mdp
            .successors(s, optimal[s])
            .iter()
            .fold((s, T::neg_infinity()), |acc, &(n, p)| if p > acc.1 { (n, p) } else { acc })
            .0;
    }
    seen.len()
}

/// Fewest transitions from each state to any state with different features.
fn distance_to_feature_change<T: Scalar>(mdp: &TabularMdp<T>) -> Vec<usize> {
    let n = mdp.num_states();
    (0..n)
        .map(|start| {
            let mut dist = vec![usize::MAX; n];
            dist[start] = 0;
            let mut queue = VecDeque::from([start]);
            while let Some(s) = queue.pop_front() {
                if mdp.features(s) != mdp.features(start) {
                    return dist[s];
                }
                for a in 0..mdp.num_actions() {
                    for &(next, _) in mdp.successors(s, a) {
                        if dist[next] == usize::MAX {
                            dist[next] = dist[s] + 1;
                            queue.push_back(next);
                        }
                    }
                }
            }
            n
        })
        .collect()
}
