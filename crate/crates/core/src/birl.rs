//! Bayesian IRL posterior sampling over unit-norm reward weights.
//!
//! The sampler is a random-walk Metropolis-Hastings chain on the unit sphere
//! with a uniform prior, so the acceptance ratio reduces to the likelihood
//! ratio of the demonstrations. The proposal perturbs the current weights with
//! isotropic Gaussian noise and renormalizes; its scale adapts toward a target
//! acceptance rate.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::env::sample_sphere;
use crate::error::{Error, Result};
use crate::mdp::{
    log_likelihood_from_q, solve_optimal, value_iteration, Demonstration, Policy, RewardWeights,
    TabularMdp, DEFAULT_TOLERANCE,
};
use crate::scalar::Scalar;

/// Smallest step size the adaptation may reach.
pub const MIN_STEP_SIZE: f64 = 1e-6;

/// Iteration cap, as a multiple of the nominal chain length.
const BUDGET_FACTOR: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McmcConfig {
    /// Retained samples.
    pub num_samples: usize,
    pub burn_in: usize,
    /// Keep every `skip`-th post-burn-in state.
    pub skip: usize,
    /// Demonstrator rationality assumed by the likelihood.
    pub beta: f64,
    pub initial_step: f64,
    pub target_accept: f64,
    /// Proposals per step-size adaptation.
    pub adapt_window: usize,
    pub seed: u64,
    pub record_trace: bool,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            num_samples: 1000,
            burn_in: 200,
            skip: 5,
            beta: 10.0,
            initial_step: 0.1,
            target_accept: 0.4,
            adapt_window: 100,
            seed: 0,
            record_trace: false,
        }
    }
}

impl McmcConfig {
    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    /// Iterations a chain runs when every state has finite likelihood.
    pub fn chain_length(&self) -> usize {
        self.burn_in + self.skip * self.num_samples
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_samples < 2 {
            return Err(Error::invalid("MCMC needs at least two retained samples"));
        }
        if self.skip == 0 || self.adapt_window == 0 {
            return Err(Error::invalid("skip and adapt_window must be positive"));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::invalid(format!("beta must be >= 0, got {}", self.beta)));
        }
        if !(self.initial_step > 0.0 && self.initial_step.is_finite()) {
            return Err(Error::invalid("initial step size must be positive"));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::invalid("target acceptance rate must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// One chain iteration, for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub log_posterior: f64,
    pub step_size: f64,
    pub accepted: bool,
}

/// Writes a chain trace as comma-separated text with a header row.
pub fn write_trace<W: Write>(mut out: W, trace: &[TraceRow]) -> std::io::Result<()> {
    writeln!(out, "iteration,log_posterior,step_size,accepted")?;
    for row in trace {
        writeln!(
            out,
            "{},{},{},{}",
            row.iteration, row.log_posterior, row.step_size, row.accepted as u8
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct PosteriorBatch<T> {
    pub samples: Vec<RewardWeights<T>>,
    /// Log-likelihood of each retained sample (the log-posterior up to a
    /// constant under the uniform prior).
    pub sample_log_likelihoods: Vec<T>,
    pub map_weights: RewardWeights<T>,
    pub map_log_likelihood: T,
    pub map_policy: Policy<T>,
    pub accept_rate: f64,
    pub final_step_size: f64,
    pub iterations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<TraceRow>>,
}

impl<T: Scalar> PosteriorBatch<T> {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn summary(&self) -> PosteriorSummary {
        let k = self.map_weights.len();
        let mut mean = vec![0.0; k];
        for w in &self.samples {
            for (m, x) in mean.iter_mut().zip(w.as_slice()) {
                *m += x.as_f64();
            }
        }
        let n = self.samples.len().max(1) as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        PosteriorSummary {
            num_samples: self.samples.len(),
            accept_rate: self.accept_rate,
            final_step_size: self.final_step_size,
            map_weights: self.map_weights.as_slice().iter().map(|x| x.as_f64()).collect(),
            map_log_likelihood: self.map_log_likelihood.as_f64(),
            mean_weights: mean,
        }
    }
}

/// Compact description of a posterior batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub num_samples: usize,
    pub accept_rate: f64,
    pub final_step_size: f64,
    pub map_weights: Vec<f64>,
    pub map_log_likelihood: f64,
    pub mean_weights: Vec<f64>,
}

/// `sigma + sigma / sqrt(i + 1) * (r - r*)`, floored at [`MIN_STEP_SIZE`],
/// where `i` is the 0-based index of the adaptation window just completed.
///
/// The step grows when proposals are accepted more often than the target and
/// shrinks when they are accepted less often.
pub fn adapt_step_size(sigma: f64, window: usize, accept_rate: f64, target: f64) -> f64 {
    let delta = sigma / ((window + 1) as f64).sqrt() * (accept_rate - target);
    (sigma + delta).max(MIN_STEP_SIZE)
}

/// Samples the reward posterior given `demos`.
pub fn run_mcmc<T: Scalar>(
    mdp: &TabularMdp<T>,
    demos: &Demonstration,
    cfg: &McmcConfig,
) -> Result<PosteriorBatch<T>> {
    run_mcmc_with_progress(mdp, demos, cfg, &|_, _| {})
}

/// [`run_mcmc`] reporting `(iteration, nominal_length)` once per adaptation
/// window.
pub fn run_mcmc_with_progress<T: Scalar>(
    mdp: &TabularMdp<T>,
    demos: &Demonstration,
    cfg: &McmcConfig,
    progress: &dyn Fn(usize, usize),
) -> Result<PosteriorBatch<T>> {
    cfg.validate()?;
    if demos.is_empty() {
        return Err(Error::invalid("posterior sampling needs at least one demonstration"));
    }
    demos.validate(mdp)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let beta = T::of(cfg.beta);
    let k = mdp.num_features();
    let num_actions = mdp.num_actions();
    let nominal = cfg.chain_length();
    let cap = BUDGET_FACTOR * nominal;

    let evaluate = |w: &RewardWeights<T>, warm: Option<&[usize]>| -> Result<(T, Vec<usize>)> {
        let rewards = mdp.rewards(w)?;
        let sol = solve_optimal(mdp, &rewards, warm);
        let ll = log_likelihood_from_q(&sol.q, num_actions, demos, beta);
        Ok((ll, sol.actions))
    };

    let mut current = RewardWeights::new(sample_sphere(&mut rng, k).into_iter().map(T::of).collect())?;
    let (mut current_ll, mut current_actions) = evaluate(&current, None)?;
    let mut map = (current.clone(), current_ll);

    let mut sigma = cfg.initial_step;
    let mut window_accepts = 0usize;
    let mut total_accepts = 0usize;
    let mut samples = Vec::with_capacity(cfg.num_samples);
    let mut sample_lls = Vec::with_capacity(cfg.num_samples);
    let mut trace = cfg.record_trace.then(Vec::new);
    let mut iteration = 0usize;

    while samples.len() < cfg.num_samples {
        if iteration >= cap {
            return Err(Error::BudgetExceeded {
                iterations: iteration,
                retained: samples.len(),
                partial: samples
                    .iter()
                    .map(|w: &RewardWeights<T>| w.as_slice().iter().map(|x| x.as_f64()).collect())
                    .collect(),
            });
        }

        let proposal: Vec<T> = current
            .as_slice()
            .iter()
            .map(|&x| x + T::of(sigma * rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let u: f64 = rng.random();
        let mut accepted = false;
        if let Ok(proposal) = RewardWeights::new(proposal) {
            let (ll, actions) = evaluate(&proposal, Some(&current_actions))?;
            if ll.is_finite() {
                if ll > map.1 {
                    map = (proposal.clone(), ll);
                }
                let log_ratio = (ll - current_ll).as_f64();
                if !current_ll.is_finite() || log_ratio >= 0.0 || u.ln() < log_ratio {
                    current = proposal;
                    current_ll = ll;
                    current_actions = actions;
                    accepted = true;
                }
            }
        }
        if accepted {
            window_accepts += 1;
            total_accepts += 1;
        }
        if let Some(trace) = trace.as_mut() {
            trace.push(TraceRow {
                iteration,
                log_posterior: current_ll.as_f64(),
                step_size: sigma,
                accepted,
            });
        }

        iteration += 1;
        if iteration % cfg.adapt_window == 0 {
            let rate = window_accepts as f64 / cfg.adapt_window as f64;
            let window = iteration / cfg.adapt_window - 1;
            sigma = adapt_step_size(sigma, window, rate, cfg.target_accept);
            window_accepts = 0;
            progress(iteration, nominal);
        }
        if iteration > cfg.burn_in && (iteration - cfg.burn_in) % cfg.skip == 0 && current_ll.is_finite() {
            samples.push(current.clone());
            sample_lls.push(current_ll);
        }
    }

    let (map_weights, map_log_likelihood) = map;
    let map_policy = policy_for(mdp, &map_weights)?;
    Ok(PosteriorBatch {
        samples,
        sample_log_likelihoods: sample_lls,
        map_weights,
        map_log_likelihood,
        map_policy,
        accept_rate: total_accepts as f64 / iteration as f64,
        final_step_size: sigma,
        iterations: iteration,
        trace,
    })
}

fn policy_for<T: Scalar>(mdp: &TabularMdp<T>, weights: &RewardWeights<T>) -> Result<Policy<T>> {
    Ok(value_iteration(mdp, weights, T::of(DEFAULT_TOLERANCE))?.1)
}

/// Greedy policy under the batch's MAP weights.
pub fn map_policy<T: Scalar>(batch: &PosteriorBatch<T>, mdp: &TabularMdp<T>) -> Result<Policy<T>> {
    if batch.is_empty() {
        return Err(Error::invalid("empty posterior batch"));
    }
    policy_for(mdp, &batch.map_weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::test_util::one_state;
    use crate::mdp::MdpParts;

    #[test]
    fn step_size_arithmetic() {
        assert!((adapt_step_size(0.1, 0, 0.4, 0.4) - 0.1).abs() < 1e-15);
        assert!((adapt_step_size(0.1, 0, 0.7, 0.4) - 0.13).abs() < 1e-12);
        assert!((adapt_step_size(0.1, 3, 0.2, 0.4) - 0.09).abs() < 1e-12);
        assert_eq!(adapt_step_size(1e-6, 0, 0.0, 0.9), MIN_STEP_SIZE);
    }

    fn flat_mdp() -> TabularMdp<f64> {
        TabularMdp::new(MdpParts {
            num_states: 1,
            num_actions: 2,
            transitions: vec![(0, 0, 0, 1.0), (0, 1, 0, 1.0)],
            features: vec![vec![0.3, -0.2]],
            discount: 0.9,
            initial_dist: vec![1.0],
            terminal_states: vec![],
        })
        .unwrap()
    }

    #[test]
    fn empty_demos_rejected() {
        let mdp = one_state(1.0, 2, 0.9);
        let err = run_mcmc(&mdp, &Demonstration::default(), &McmcConfig::default());
        assert!(matches!(err, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn invalid_config_rejected() {
        let mdp = flat_mdp();
        let demos = Demonstration::from_pairs(&[(0, 0)]);
        let cfg = McmcConfig { num_samples: 1, ..McmcConfig::default() };
        assert!(run_mcmc(&mdp, &demos, &cfg).is_err());
        let cfg = McmcConfig { target_accept: 1.0, ..McmcConfig::default() };
        assert!(run_mcmc(&mdp, &demos, &cfg).is_err());
    }

    #[test]
    fn same_seed_same_samples() {
        let mdp = flat_mdp();
        let demos = Demonstration::from_pairs(&[(0, 1)]);
        let cfg = McmcConfig { num_samples: 50, seed: 4, ..McmcConfig::default() };
        let a = run_mcmc(&mdp, &demos, &cfg).unwrap();
        let b = run_mcmc(&mdp, &demos, &cfg).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.map_weights, b.map_weights);
    }

    #[test]
    fn retains_configured_count_of_unit_samples() {
        let mdp = flat_mdp();
        let demos = Demonstration::from_pairs(&[(0, 0)]);
        let cfg = McmcConfig { num_samples: 120, burn_in: 30, skip: 3, ..McmcConfig::default() };
        let batch = run_mcmc(&mdp, &demos, &cfg).unwrap();
        assert_eq!(batch.len(), 120);
        assert_eq!(batch.iterations, cfg.chain_length());
        assert!(batch.samples.iter().all(|w| (w.norm() - 1.0).abs() < 1e-9));
        assert!(batch.sample_log_likelihoods.iter().all(|&ll| ll.is_finite() && ll <= batch.map_log_likelihood));
    }

    #[test]
    fn trace_is_recorded_and_written() {
        let mdp = flat_mdp();
        let demos = Demonstration::from_pairs(&[(0, 0)]);
        let cfg = McmcConfig { num_samples: 10, burn_in: 0, skip: 1, record_trace: true, ..McmcConfig::default() };
        let batch = run_mcmc(&mdp, &demos, &cfg).unwrap();
        let trace = batch.trace.as_ref().unwrap();
        assert_eq!(trace.len(), batch.iterations);
        let mut out = Vec::new();
        write_trace(&mut out, trace).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), trace.len() + 1);
        assert!(text.starts_with("iteration,log_posterior,step_size,accepted"));
    }

    #[test]
    fn progress_reports_each_window() {
        let mdp = flat_mdp();
        let demos = Demonstration::from_pairs(&[(0, 0)]);
        let cfg = McmcConfig { num_samples: 100, burn_in: 0, skip: 2, ..McmcConfig::default() };
        let calls = std::cell::Cell::new(0);
        run_mcmc_with_progress(&mdp, &demos, &cfg, &|i, total| {
            assert!(i <= total);
            calls.set(calls.get() + 1);
        })
        .unwrap();
        assert_eq!(calls.get(), 2);
    }

    #[test]
    fn map_policy_is_pure() {
        let mdp = flat_mdp();
        let demos = Demonstration::from_pairs(&[(0, 0)]);
        let cfg = McmcConfig { num_samples: 20, ..McmcConfig::default() };
        let batch = run_mcmc(&mdp, &demos, &cfg).unwrap();
        assert_eq!(map_policy(&batch, &mdp).unwrap(), map_policy(&batch, &mdp).unwrap());
        assert_eq!(map_policy(&batch, &mdp).unwrap(), batch.map_policy);
    }
}
