//! Group-relative policy optimization: group-normalized advantages, sequence
//! probability ratios, the `ρ − ln ρ − 1` KL estimator, and the clipped
//! surrogate objective with its exact gradient.
//!
//! All quantities are sequence level: a response's log-probability is the sum
//! of its per-token log-probabilities.
//!
//! ```text
//! J = 1/N Σ_i [ min(d_i A_i, clip(d_i, 1-ε, 1+ε) A_i) - β KL_i ]
//! d_i  = exp(log π_θ(y_i) - log π_old(y_i))
//! KL_i = ρ_i - ln ρ_i - 1,   ρ_i = exp(log π_ref(y_i) - log π_θ(y_i))
//! A_i  = (r_i - mean(r)) / std(r)
//! ```
//!
//! With `kl_in_clip` the penalty moves inside the second argument of the min.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reward::RewardBreakdown;
use crate::vocab::TokenId;

/// Exponents above this many nats are rejected rather than overflowed.
pub const DEFAULT_OVERFLOW_BOUND: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StdKind {
    /// Divide by N.
    #[default]
    Population,
    /// Divide by N - 1.
    Sample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub clip_epsilon: f64,
    pub kl_beta: f64,
    pub std_floor: f64,
    pub std_kind: StdKind,
    pub kl_in_clip: bool,
    pub inner_epochs: usize,
    pub learning_rate: f64,
    /// Updates whose gradient norm exceeds this are rescaled to it.
    pub max_grad_norm: f64,
    pub max_response_len: usize,
    pub temperature: f64,
    pub overflow_bound: f64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig {
            group_size: 8,
            clip_epsilon: 0.2,
            kl_beta: 0.04,
            std_floor: 1e-8,
            std_kind: StdKind::Population,
            kl_in_clip: false,
            inner_epochs: 1,
            learning_rate: 0.5,
            max_grad_norm: 1.0,
            max_response_len: 64,
            temperature: 1.0,
            overflow_bound: DEFAULT_OVERFLOW_BOUND,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.group_size < 2 {
            return fail("grpo.group_size must be at least 2");
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return fail("grpo.clip_epsilon must lie in (0, 1)");
        }
        if !(self.kl_beta >= 0.0 && self.kl_beta.is_finite()) {
            return fail("grpo.kl_beta must be finite and non-negative");
        }
        if !(self.std_floor > 0.0 && self.std_floor <= 1e-6) {
            return fail("grpo.std_floor must lie in (0, 1e-6]");
        }
        if self.inner_epochs == 0 {
            return fail("grpo.inner_epochs must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("grpo.learning_rate must be positive");
        }
        if !(self.max_grad_norm > 0.0) {
            return fail("grpo.max_grad_norm must be positive");
        }
        if self.max_response_len == 0 {
            return fail("grpo.max_response_len must be positive");
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return fail("grpo.temperature must be positive");
        }
        if !(self.overflow_bound > 0.0) {
            return fail("grpo.overflow_bound must be positive");
        }
        Ok(())
    }
}

/// One prompt with N sampled responses and their per-token log-probabilities
/// under the current, old and reference policies.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutGroup {
    pub prompt_id: String,
    pub responses: Vec<Vec<TokenId>>,
    pub logp_theta: Vec<Vec<f64>>,
    pub logp_old: Vec<Vec<f64>>,
    pub logp_ref: Vec<Vec<f64>>,
    pub rewards: Vec<RewardBreakdown>,
}

impl RolloutGroup {
    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn check(&self) -> Result<()> {
        let n = self.responses.len();
        let aligned = [self.logp_theta.len(), self.logp_old.len(), self.logp_ref.len(), self.rewards.len()]
            .iter()
            .all(|&m| m == n);
        if !aligned {
            return Err(Error::ShapeMismatch(format!("rollout group {} is not aligned", self.prompt_id)));
        }
        for (i, r) in self.responses.iter().enumerate() {
            for lp in [&self.logp_theta[i], &self.logp_old[i], &self.logp_ref[i]] {
                if lp.len() != r.len() {
                    return Err(Error::ShapeMismatch(format!(
                        "response {i} of {} has {} tokens but {} log-probabilities",
                        self.prompt_id,
                        r.len(),
                        lp.len()
                    )));
                }
                if lp.iter().any(|&x| !(x <= 0.0)) {
                    return Err(Error::ShapeMismatch(format!(
                        "response {i} of {} has a positive or NaN log-probability",
                        self.prompt_id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn total_rewards(&self) -> Vec<f64> {
        self.rewards.iter().map(|r| r.total).collect()
    }

    pub fn theta_sums(&self) -> Vec<f64> {
        self.logp_theta.iter().map(|v| v.iter().sum()).collect()
    }

    pub fn old_sums(&self) -> Vec<f64> {
        self.logp_old.iter().map(|v| v.iter().sum()).collect()
    }

    pub fn ref_sums(&self) -> Vec<f64> {
        self.logp_ref.iter().map(|v| v.iter().sum()).collect()
    }
}

/// Group-normalized advantages, one per response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AdvantageVector(pub Vec<f64>);

impl AdvantageVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&a| a == 0.0)
    }
}

/// `A_i = (r_i - mean) / std` with the population standard deviation; all
/// zeros when the standard deviation falls below `std_floor`.
pub fn group_advantages(rewards: &[f64], std_floor: f64) -> Result<AdvantageVector> {
    group_advantages_with(rewards, std_floor, StdKind::Population)
}

pub fn group_advantages_with(rewards: &[f64], std_floor: f64, kind: StdKind) -> Result<AdvantageVector> {
    let n = rewards.len();
    if n < 2 {
        return Err(Error::GroupTooSmall(n));
    }
    let mean = rewards.iter().sum::<f64>() / n as f64;
    let ss: f64 = rewards.iter().map(|r| (r - mean) * (r - mean)).sum();
    let denom = match kind {
        StdKind::Population => n as f64,
        StdKind::Sample => (n - 1) as f64,
    };
    let std = (ss / denom).sqrt();
    if !(std >= std_floor) {
        return Ok(AdvantageVector(vec![0.0; n]));
    }
    Ok(AdvantageVector(rewards.iter().map(|r| (r - mean) / std).collect()))
}

fn bounded_exp(exponent: f64, bound: f64) -> Result<f64> {
    // Large negative exponents underflow harmlessly towards zero.
    if !exponent.is_finite() || exponent > bound {
        return Err(Error::NonFiniteRatio { diff: exponent, bound });
    }
    Ok(exponent.exp())
}

/// Probability ratio `π_θ(y) / π_old(y)` from sequence log-probabilities.
pub fn ratio(logp_theta_sum: f64, logp_old_sum: f64) -> Result<f64> {
    ratio_bounded(logp_theta_sum, logp_old_sum, DEFAULT_OVERFLOW_BOUND)
}

pub fn ratio_bounded(logp_theta_sum: f64, logp_old_sum: f64, bound: f64) -> Result<f64> {
    bounded_exp(logp_theta_sum - logp_old_sum, bound)
}

/// `ρ - ln ρ - 1` with `ρ = π_ref(y) / π_θ(y)`.
pub fn kl_estimate(logp_ref_sum: f64, logp_theta_sum: f64) -> Result<f64> {
    kl_estimate_bounded(logp_ref_sum, logp_theta_sum, DEFAULT_OVERFLOW_BOUND)
}

pub fn kl_estimate_bounded(logp_ref_sum: f64, logp_theta_sum: f64, bound: f64) -> Result<f64> {
    let log_rho = logp_ref_sum - logp_theta_sum;
    bounded_exp(log_rho, bound)?;
    // exp_m1 keeps precision for ρ near 1, where the estimate is O(log_rho²).
    Ok((log_rho.exp_m1() - log_rho).max(0.0))
}

/// Per-response pieces of the surrogate objective.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateTerms {
    /// Mean of the per-response terms.
    pub objective: f64,
    /// `∂objective / ∂(log π_θ(y_i))`, already divided by N.
    pub coefficients: Vec<f64>,
    pub ratios: Vec<f64>,
    pub kl: Vec<f64>,
    /// Whether the min selected a clipped (constant in θ) value.
    pub clipped: Vec<bool>,
}

impl SurrogateTerms {
    pub fn clip_fraction(&self) -> f64 {
        if self.clipped.is_empty() {
            return 0.0;
        }
        self.clipped.iter().filter(|&&c| c).count() as f64 / self.clipped.len() as f64
    }

    pub fn mean_kl(&self) -> f64 {
        if self.kl.is_empty() {
            return 0.0;
        }
        self.kl.iter().sum::<f64>() / self.kl.len() as f64
    }
}

/// Evaluate the surrogate objective and its derivative with respect to each
/// response's sequence log-probability under π_θ.
pub fn surrogate_terms(group: &RolloutGroup, advantages: &AdvantageVector, config: &GrpoConfig) -> Result<SurrogateTerms> {
    let n = group.len();
    if advantages.0.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} advantages for a group of {n}",
            advantages.0.len()
        )));
    }
    let theta = group.theta_sums();
    let old = group.old_sums();
    let reference = group.ref_sums();
    let (lo, hi) = (1.0 - config.clip_epsilon, 1.0 + config.clip_epsilon);
    let beta = config.kl_beta;

    let mut terms = SurrogateTerms {
        objective: 0.0,
        coefficients: Vec::with_capacity(n),
        ratios: Vec::with_capacity(n),
        kl: Vec::with_capacity(n),
        clipped: Vec::with_capacity(n),
    };
    for i in 0..n {
        let a = advantages.0[i];
        let d = ratio_bounded(theta[i], old[i], config.overflow_bound)?;
        let rho = bounded_exp(reference[i] - theta[i], config.overflow_bound)?;
        let kl = kl_estimate_bounded(reference[i], theta[i], config.overflow_bound)?;
        let clipped_d = d.clamp(lo, hi);
        let clip_active = clipped_d != d;
        // d(d)/dlogp = d ; d(-KL)/dlogp = ρ - 1
        let d_unclipped = d * a;
        let d_kl = beta * (rho - 1.0);

        let (term, coef, clipped) = if config.kl_in_clip {
            let first = d * a;
            let second = clipped_d * a - beta * kl;
            if first <= second {
                (first, d_unclipped, false)
            } else {
                let through_ratio = if clip_active { 0.0 } else { d_unclipped };
                (second, through_ratio + d_kl, clip_active)
            }
        } else {
            let first = d * a;
            let second = clipped_d * a;
            let (surr, coef, clipped) = if first <= second {
                (first, d_unclipped, false)
            } else {
                (second, 0.0, true)
            };
            (surr - beta * kl, coef + d_kl, clipped)
        };
        terms.objective += term;
        terms.coefficients.push(coef / n as f64);
        terms.ratios.push(d);
        terms.kl.push(kl);
        terms.clipped.push(clipped);
    }
    terms.objective /= n as f64;
    Ok(terms)
}

pub fn surrogate_objective(group: &RolloutGroup, advantages: &AdvantageVector, config: &GrpoConfig) -> Result<f64> {
    Ok(surrogate_terms(group, advantages, config)?.objective)
}

/// Source of `∂ log π_θ(y_i) / ∂params` for the responses of a group.
pub trait LogProbGradient {
    fn dim(&self) -> usize;

    /// Add `scale · ∂ log π_θ(y_i) / ∂params` into `out`.
    fn accumulate(&self, response: usize, scale: f64, out: &mut [f64]);
}

/// Precomputed dense per-response gradients.
impl LogProbGradient for [Vec<f64>] {
    fn dim(&self) -> usize {
        self.first().map_or(0, Vec::len)
    }

    fn accumulate(&self, response: usize, scale: f64, out: &mut [f64]) {
        for (o, g) in out.iter_mut().zip(&self[response]) {
            *o += scale * g;
        }
    }
}

/// Exact gradient of [`surrogate_objective`] with respect to the policy
/// parameters; π_old and π_ref are constants.
pub fn objective_gradient<G: LogProbGradient + ?Sized>(
    group: &RolloutGroup,
    advantages: &AdvantageVector,
    grads: &G,
    config: &GrpoConfig,
) -> Result<Vec<f64>> {
    let terms = surrogate_terms(group, advantages, config)?;
    let mut out = vec![0.0; grads.dim()];
    for (i, &c) in terms.coefficients.iter().enumerate() {
        if c != 0.0 {
            grads.accumulate(i, c, &mut out);
        }
    }
    Ok(out)
}
