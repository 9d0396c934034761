//! Regret and improvement metrics and their value-at-risk bounds.
//!
//! Given `n` metric samples (one per posterior reward sample), the α-VaR
//! point estimate is the order statistic `Z_k` with `k = ceil(α n)`. The
//! high-confidence upper bound is the smallest order statistic `Z_j` whose
//! probability of lying above the true α-quantile reaches `1 - δ`; that
//! probability is the Binomial(n, α) CDF evaluated at `j - 1`. All order
//! statistic indices are 1-based.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::mdp::dp::dot;
use crate::mdp::{solve_optimal, uniform_random_policy, Policy, PolicyEvaluator, RewardWeights, TabularMdp};
use crate::scalar::Scalar;

/// Sample count from which `Auto` switches to the Gaussian approximation.
pub const GAUSSIAN_THRESHOLD: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexMethod {
    /// Exact binomial below [`GAUSSIAN_THRESHOLD`] samples, Gaussian above.
    #[default]
    Auto,
    ExactBinomial,
    GaussianApprox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RiskConfig {
    /// Quantile level of the value-at-risk.
    pub alpha: f64,
    /// The bound holds with probability `1 - delta`.
    pub delta: f64,
    pub index_method: IndexMethod,
    /// Normalizers smaller than this are treated as zero.
    pub degenerate_tolerance: f64,
}

impl Default for RiskConfig {
    fn default() -> Self {
        Self {
            alpha: 0.95,
            delta: 0.05,
            index_method: IndexMethod::Auto,
            degenerate_tolerance: 1e-8,
        }
    }
}

impl RiskConfig {
    pub fn with_alpha(alpha: f64) -> Self {
        Self {
            alpha,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.delta > 0.0 && self.delta < 0.5) {
            return Err(Error::invalid(format!("delta must lie in (0, 0.5), got {}", self.delta)));
        }
        if !(self.degenerate_tolerance > 0.0) {
            return Err(Error::invalid("degenerate tolerance must be positive"));
        }
        Ok(())
    }
}

/// Finite metric samples with a cached ascending copy.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSamples<T> {
    values: Vec<T>,
    sorted: Vec<T>,
}

impl<T: Scalar> MetricSamples<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("metric samples must be non-empty"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("metric samples must be finite"));
        }
        let mut sorted = values.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values are ordered"));
        Ok(Self { values, sorted })
    }

    /// Keeps the successful finite values and counts the rest as excluded.
    /// Returns `None` when nothing survives.
    pub fn from_results(results: impl IntoIterator<Item = Result<T>>) -> (Option<Self>, usize) {
        let mut kept = Vec::new();
        let mut excluded = 0;
        for r in results {
            match r {
                Ok(v) if v.is_finite() => kept.push(v),
                Ok(_) | Err(_) => excluded += 1,
            }
        }
        if excluded > 0 {
            tracing::debug!(excluded, kept = kept.len(), "excluded degenerate metric samples");
        }
        (Self::new(kept).ok(), excluded)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn sorted(&self) -> &[T] {
        &self.sorted
    }

    /// 1-based order statistic `Z_j`.
    pub fn order_statistic(&self, j: usize) -> T {
        self.sorted[j - 1]
    }

    pub fn negated(&self) -> Self {
        Self {
            values: self.values.iter().map(|&v| -v).collect(),
            sorted: self.sorted.iter().rev().map(|&v| -v).collect(),
        }
    }
}

/// Binomial(n, p) CDF at `k`, summed in log space from the left tail.
pub fn binomial_cdf(k: usize, n: usize, p: f64) -> f64 {
    if k >= n {
        return 1.0;
    }
    binomial_cdf_terms(n, p).take(k + 1).sum::<f64>().min(1.0)
}

fn binomial_cdf_terms(n: usize, p: f64) -> impl Iterator<Item = f64> {
    let ln_p = p.ln();
    let ln_q = (1.0 - p).ln();
    let mut log_pmf = n as f64 * ln_q;
    (0..=n).map(move |i| {
        let term = log_pmf.exp();
        if i < n {
            log_pmf += ((n - i) as f64).ln() - ((i + 1) as f64).ln() + ln_p - ln_q;
        }
        term
    })
}

/// Smallest 1-based `j` with `F(j - 1; n, alpha) >= 1 - delta`; `n + 1` when
/// no order statistic qualifies.
pub fn exact_binomial_index(n: usize, alpha: f64, delta: f64) -> usize {
    let target = 1.0 - delta;
    let mut cdf = 0.0;
    for (i, term) in binomial_cdf_terms(n, alpha).enumerate() {
        cdf += term;
        if cdf >= target {
            return i + 1;
        }
    }
    n + 1
}

/// `ceil(n alpha + z_{1-delta} sqrt(n alpha (1 - alpha)) - 1/2)`, at least 1.
pub fn gaussian_index(n: usize, alpha: f64, delta: f64) -> usize {
    let z = Normal::standard().inverse_cdf(1.0 - delta);
    let nf = n as f64;
    let j = (nf * alpha + z * (nf * alpha * (1.0 - alpha)).sqrt() - 0.5).ceil();
    j.max(1.0) as usize
}

/// Unclamped confidence index for `n` samples.
pub fn confidence_index(n: usize, cfg: &RiskConfig) -> usize {
    let gaussian = match cfg.index_method {
        IndexMethod::Auto => n >= GAUSSIAN_THRESHOLD,
        IndexMethod::ExactBinomial => false,
        IndexMethod::GaussianApprox => true,
    };
    if gaussian {
        gaussian_index(n, cfg.alpha, cfg.delta)
    } else {
        exact_binomial_index(n, cfg.alpha, cfg.delta)
    }
}

/// An order-statistic bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarBound<T> {
    pub value: T,
    /// 1-based index of the order statistic returned.
    pub index: usize,
    /// False when the requested confidence needs more samples than exist; the
    /// value is then the extreme sample and must not be trusted.
    pub certified: bool,
}

/// `Z_k` with `k = ceil(alpha n)`.
pub fn var_point_estimate<T: Scalar>(samples: &MetricSamples<T>, alpha: f64) -> T {
    let n = samples.len();
    let k = ((alpha * n as f64).ceil() as usize).clamp(1, n);
    samples.order_statistic(k)
}

/// High-confidence upper bound on the α-VaR.
pub fn var_confidence_bound<T: Scalar>(samples: &MetricSamples<T>, cfg: &RiskConfig) -> Result<VarBound<T>> {
    cfg.validate()?;
    let n = samples.len();
    if n < 2 {
        return Err(Error::invalid("confidence bound needs at least two samples"));
    }
    let j = confidence_index(n, cfg);
    let certified = j <= n;
    let index = j.min(n);
    Ok(VarBound {
        value: samples.order_statistic(index),
        index,
        certified,
    })
}

/// High-confidence lower bound on the (1 - α)-quantile: the upper bound of
/// the negated samples, negated back.
pub fn piob_lower_bound<T: Scalar>(samples: &MetricSamples<T>, cfg: &RiskConfig) -> Result<VarBound<T>> {
    let upper = var_confidence_bound(&samples.negated(), cfg)?;
    Ok(VarBound {
        value: -upper.value,
        index: samples.len() + 1 - upper.index,
        certified: upper.certified,
    })
}

/// `(V* - V^robot) / (V* - V^rand)` from expected returns.
pub fn normalized_regret<T: Scalar>(optimal: T, robot: T, random: T, tolerance: T) -> Result<T> {
    let numerator = optimal - robot;
    let denominator = optimal - random;
    if denominator < tolerance {
        if numerator < tolerance {
            Ok(T::zero())
        } else {
            Err(Error::DegenerateNormalizer)
        }
    } else {
        Ok(numerator / denominator)
    }
}

/// `(V^robot - V^base) / |V^base|` from expected returns.
pub fn percent_improvement<T: Scalar>(robot: T, base: T, tolerance: T) -> Result<T> {
    if base.abs() < tolerance {
        return Err(Error::DegenerateBaseline);
    }
    Ok((robot - base) / base.abs())
}

/// Normalized expected value difference of `robot` under `weights`.
pub fn nevd<T: Scalar>(
    mdp: &TabularMdp<T>,
    robot: &Policy<T>,
    weights: &RewardWeights<T>,
    cfg: &RiskConfig,
) -> Result<T> {
    let values = PolicyComparison::new(mdp, robot)?.evaluate(weights)?;
    values.nevd(mdp, T::of(cfg.degenerate_tolerance))
}

/// `V*(s) - V^robot(s)` for every state.
pub fn evd_per_state<T: Scalar>(
    mdp: &TabularMdp<T>,
    robot: &Policy<T>,
    weights: &RewardWeights<T>,
) -> Result<Vec<T>> {
    Ok(PolicyComparison::new(mdp, robot)?.evaluate(weights)?.evd_per_state())
}

/// Percent improvement of `robot` over `base` under `weights`.
pub fn piob<T: Scalar>(
    mdp: &TabularMdp<T>,
    robot: &Policy<T>,
    base: &Policy<T>,
    weights: &RewardWeights<T>,
    cfg: &RiskConfig,
) -> Result<T> {
    let rewards = mdp.rewards(weights)?;
    let v_robot = PolicyEvaluator::new(mdp, robot)?.evaluate(&rewards);
    let v_base = PolicyEvaluator::new(mdp, base)?.evaluate(&rewards);
    percent_improvement(
        dot(mdp.initial_dist(), &v_robot),
        dot(mdp.initial_dist(), &v_base),
        T::of(cfg.degenerate_tolerance),
    )
}

/// Evaluates one robot policy (and the uniform random policy) against many
/// reward samples. Both policies are factored once.
#[derive(Debug, Clone)]
pub struct PolicyComparison<'a, T> {
    mdp: &'a TabularMdp<T>,
    robot: PolicyEvaluator<T>,
    random: PolicyEvaluator<T>,
    warm: Vec<usize>,
}

/// Per-state values of one reward sample.
#[derive(Debug, Clone)]
pub struct SampleValues<T> {
    pub rewards: Vec<T>,
    pub optimal: Vec<T>,
    pub robot: Vec<T>,
    pub random: Vec<T>,
}

impl<'a, T: Scalar> PolicyComparison<'a, T> {
    pub fn new(mdp: &'a TabularMdp<T>, robot: &Policy<T>) -> Result<Self> {
        Ok(Self {
            mdp,
            robot: PolicyEvaluator::new(mdp, robot)?,
            random: PolicyEvaluator::new(mdp, &uniform_random_policy(mdp))?,
            warm: robot.greedy_actions(),
        })
    }

    pub fn evaluate(&self, weights: &RewardWeights<T>) -> Result<SampleValues<T>> {
        let rewards = self.mdp.rewards(weights)?;
        let optimal = solve_optimal(self.mdp, &rewards, Some(&self.warm)).values;
        let robot = self.robot.evaluate(&rewards);
        let random = self.random.evaluate(&rewards);
        Ok(SampleValues {
            rewards,
            optimal,
            robot,
            random,
        })
    }
}

impl<T: Scalar> SampleValues<T> {
    pub fn nevd(&self, mdp: &TabularMdp<T>, tolerance: T) -> Result<T> {
        let s0 = mdp.initial_dist();
        normalized_regret(dot(s0, &self.optimal), dot(s0, &self.robot), dot(s0, &self.random), tolerance)
    }

    pub fn robot_return(&self, mdp: &TabularMdp<T>) -> T {
        dot(mdp.initial_dist(), &self.robot)
    }

    pub fn evd_per_state(&self) -> Vec<T> {
        self.optimal.iter().zip(&self.robot).map(|(&o, &r)| o - r).collect()
    }
}
