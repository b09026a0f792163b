//! Closed-form risk bounds.
//!
//! Everything here is a pure scalar function so the property tests and the
//! `bound` subcommand share one code path. Distances are taken over weights
//! only and `d_effective` counts weight parameters (`k * d`); per-action
//! biases are deterministic and carry no KL cost.

use crate::data::LoggedDataset;
use crate::error::{CrmError, Result};
use crate::estimators;
use crate::policy::{param_distance_sq, MixedLogitSpec, SoftmaxPolicy};

/// Inputs shared by the truncated-IPS PAC-Bayes bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundInputs {
    pub n: usize,
    pub delta: f64,
    pub tau: f64,
    /// KL(Q‖P), or an upper bound on it.
    pub kl_term: f64,
    /// Truncated IPS empirical risk, or an upper bound on it.
    pub emp_risk: f64,
}

impl BoundInputs {
    fn validate(&self, min_risk: f64) -> Result<()> {
        check_n(self.n)?;
        check_delta(self.delta)?;
        estimators::check_tau(self.tau)?;
        if !(self.kl_term >= 0.0 && self.kl_term.is_finite()) {
            return Err(CrmError::arg(format!(
                "KL term must be finite and nonnegative, got {}",
                self.kl_term
            )));
        }
        if !(self.emp_risk >= min_risk - 1e-12 && self.emp_risk.is_finite()) {
            return Err(CrmError::arg(format!(
                "empirical risk {} below its floor {min_risk}",
                self.emp_risk
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityParams {
    /// Lipschitz constant of the logging-policy loss.
    pub lipschitz: f64,
    pub lambda: f64,
    pub n: usize,
    pub delta: f64,
}

impl StabilityParams {
    fn validate(&self) -> Result<()> {
        if !(self.lipschitz > 0.0 && self.lambda > 0.0 && self.n > 0) {
            return Err(CrmError::arg(
                "stability parameters L, lambda and n must be positive",
            ));
        }
        check_delta(self.delta)
    }
}

/// Lipschitz constant of the softmax negative log-likelihood in the weights
/// under the block feature map: each per-example gradient has norm at most
/// `‖e_a - π‖·‖x‖ ≤ √2·B`, and `2B` is used as a round upper bound.
pub fn nll_lipschitz(norm_bound: f64) -> f64 {
    2.0 * norm_bound
}

fn check_n(n: usize) -> Result<()> {
    if n < 2 {
        return Err(CrmError::arg(format!("need n >= 2, got {n}")));
    }
    Ok(())
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(CrmError::arg(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    Ok(())
}

fn check_variances(sigma: f64, sigma0: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma0 > 0.0) {
        return Err(CrmError::arg(format!(
            "variances must be positive, got sigma = {sigma}, sigma0 = {sigma0}"
        )));
    }
    Ok(())
}

fn check_kl_hypothesis(sigma: f64, sigma0: f64) -> Result<()> {
    check_variances(sigma, sigma0)?;
    if sigma > sigma0 {
        return Err(CrmError::arg(format!(
            "posterior variance {sigma} exceeds prior variance {sigma0}; the KL bound requires sigma <= sigma0"
        )));
    }
    Ok(())
}

/// McAllester's PAC-Bayes bound for a [0, 1] loss.
pub fn mcallester_bound(emp_risk: f64, kl: f64, n: usize, delta: f64) -> Result<f64> {
    check_n(n)?;
    check_delta(delta)?;
    if !(0.0..=1.0).contains(&emp_risk) {
        return Err(CrmError::arg(format!(
            "empirical risk {emp_risk} outside [0, 1]"
        )));
    }
    if !(kl >= 0.0) {
        return Err(CrmError::arg(format!("KL must be nonnegative, got {kl}")));
    }
    let complexity = kl + (n as f64 / delta).ln();
    let m = (n - 1) as f64;
    Ok(emp_risk + (2.0 * emp_risk * complexity / m).sqrt() + 2.0 * complexity / m)
}

/// Risk bound for a fixed truncation level τ.
pub fn crm_bound_fixed_tau(inputs: &BoundInputs) -> Result<f64> {
    let BoundInputs {
        n,
        delta,
        tau,
        kl_term,
        emp_risk,
    } = *inputs;
    inputs.validate(1.0 - 1.0 / tau)?;
    let complexity = kl_term + (n as f64 / delta).ln();
    let scale = tau * (n - 1) as f64;
    let excess = (emp_risk - 1.0 + 1.0 / tau).max(0.0);
    Ok(emp_risk + (2.0 * excess * complexity / scale).sqrt() + 2.0 * complexity / scale)
}

/// Risk bound holding simultaneously for every τ in (0, 1), so τ may be
/// chosen from the data (e.g. a propensity percentile).
pub fn crm_bound_all_tau(inputs: &BoundInputs) -> Result<f64> {
    let BoundInputs {
        n,
        delta,
        tau,
        kl_term,
        emp_risk,
    } = *inputs;
    inputs.validate(1.0 - 2.0 / tau)?;
    let complexity = kl_term + (2.0 * n as f64 / (delta * tau)).ln();
    let scale = tau * (n - 1) as f64;
    let excess = (emp_risk - 1.0 + 2.0 / tau).max(0.0);
    Ok(emp_risk + (4.0 * excess * complexity / scale).sqrt() + 4.0 * complexity / scale)
}

/// Index of the dyadic grid point `2^{-i}` used to cover a data-dependent τ.
pub fn dyadic_tau_index(tau: f64) -> Result<u32> {
    estimators::check_tau(tau)?;
    Ok(((1.0 / tau).ln() / std::f64::consts::LN_2).ceil().max(1.0) as u32)
}

/// Exact KL divergence between `N(θ̂, σI)` and `N(θ0, σ0 I)` over `d` weights.
pub fn gaussian_kl_exact(
    theta_hat: &SoftmaxPolicy,
    sigma: f64,
    theta0: &SoftmaxPolicy,
    sigma0: f64,
    d_effective: usize,
) -> Result<f64> {
    check_variances(sigma, sigma0)?;
    let dist = param_distance_sq(theta_hat, theta0)?;
    Ok(gaussian_kl_exact_from(dist, sigma, sigma0, d_effective))
}

pub fn gaussian_kl_exact_from(dist_sq: f64, sigma: f64, sigma0: f64, d: usize) -> f64 {
    let ratio = sigma / sigma0;
    dist_sq / (2.0 * sigma0) + 0.5 * d as f64 * (-ratio.ln() + ratio - 1.0)
}

/// KL upper bound obtained by dropping the nonpositive `σ/σ0 - 1` term.
pub fn gaussian_kl_bound(
    theta_hat: &SoftmaxPolicy,
    sigma: f64,
    theta0: &SoftmaxPolicy,
    sigma0: f64,
    d_effective: usize,
) -> Result<f64> {
    check_kl_hypothesis(sigma, sigma0)?;
    let dist = param_distance_sq(theta_hat, theta0)?;
    Ok(0.5 * c_term_from(dist, sigma, sigma0, d_effective))
}

/// `‖θ̂ - θ0‖²/σ0 + d ln(σ0/σ)`, twice the KL bound.
pub fn c_term(
    theta_hat: &SoftmaxPolicy,
    sigma: f64,
    theta0: &SoftmaxPolicy,
    sigma0: f64,
    d_effective: usize,
) -> Result<f64> {
    check_kl_hypothesis(sigma, sigma0)?;
    let dist = param_distance_sq(theta_hat, theta0)?;
    Ok(c_term_from(dist, sigma, sigma0, d_effective))
}

pub fn c_term_from(dist_sq: f64, sigma: f64, sigma0: f64, d: usize) -> f64 {
    dist_sq / sigma0 + d as f64 * (sigma0 / sigma).ln()
}

/// Shared tail of the mixed-logit bounds:
/// `ρ + sqrt((ρ - 1 + 1/τ)(C + 2 ln(n/δ)) / (τ(n-1))) + (C + 2 ln(n/δ)) / (τ(n-1))`.
///
/// Identical to [`crm_bound_fixed_tau`] with the KL term set to `C/2`.
pub fn complexity_bound(
    emp_risk: f64,
    complexity: f64,
    n: usize,
    delta: f64,
    tau: f64,
) -> Result<f64> {
    crm_bound_fixed_tau(&BoundInputs {
        n,
        delta,
        tau,
        kl_term: 0.5 * complexity,
        emp_risk,
    })
}

/// Risk bound for a mixed-logit policy with a known Gaussian prior.
pub fn mixed_logit_risk_bound(
    spec: &MixedLogitSpec,
    data: &LoggedDataset,
    tau: f64,
    delta: f64,
) -> Result<f64> {
    let d_eff = spec.mean.weight_count();
    let c = c_term(
        &spec.mean,
        spec.variance,
        &spec.prior_mean,
        spec.prior_variance,
        d_eff,
    )?;
    let risk = estimators::mean_param_risk(
        &spec.mean,
        spec.variance,
        data.feature_norm_bound(),
        data,
        tau,
    )?;
    complexity_bound(risk, c, data.len(), delta, tau)
}

/// Uniform stability of regularized ERM: `β = L / (λ n)`.
pub fn stability_constant(params: &StabilityParams) -> Result<f64> {
    params.validate()?;
    Ok(params.lipschitz / (params.lambda * params.n as f64))
}

/// Concentration slack `(L/λ) sqrt(2 ln(4/δ) / n)` between the learned and
/// the expected logging-policy estimate.
pub fn stability_slack(params: &StabilityParams) -> Result<f64> {
    params.validate()?;
    Ok(params.lipschitz / params.lambda
        * (2.0 * (4.0 / params.delta).ln() / params.n as f64).sqrt())
}

/// `(‖θ̂ - ŵ‖ + slack)² / σ0 + d ln(σ0/σ)` for a prior centred on the
/// expectation of a learned logging policy `ŵ`.
pub fn data_dep_c_term(
    theta_hat: &SoftmaxPolicy,
    sigma: f64,
    w_hat: &SoftmaxPolicy,
    sigma0: f64,
    params: &StabilityParams,
    d_effective: usize,
) -> Result<f64> {
    check_kl_hypothesis(sigma, sigma0)?;
    let dist = param_distance_sq(theta_hat, w_hat)?.sqrt();
    let slack = stability_slack(params)?;
    Ok((dist + slack).powi(2) / sigma0 + d_effective as f64 * (sigma0 / sigma).ln())
}

/// Risk bound with a prior learned from the same logs (two-step procedure).
///
/// `spec.prior_mean` holds the learned logging policy ŵ; the log terms use
/// `2n/δ` because the confidence budget is split between the PAC-Bayes
/// event and the concentration of ŵ.
pub fn data_dep_risk_bound(
    spec: &MixedLogitSpec,
    data: &LoggedDataset,
    tau: f64,
    delta: f64,
    stability: &StabilityParams,
) -> Result<f64> {
    if stability.delta != delta {
        return Err(CrmError::arg(
            "stability parameters must use the same delta as the bound",
        ));
    }
    let d_eff = spec.mean.weight_count();
    let c_hat = data_dep_c_term(
        &spec.mean,
        spec.variance,
        &spec.prior_mean,
        spec.prior_variance,
        stability,
        d_eff,
    )?;
    let risk = estimators::mean_param_risk(
        &spec.mean,
        spec.variance,
        data.feature_norm_bound(),
        data,
        tau,
    )?;
    // 2 ln(n/(δ/2)) = 2 ln(2n/δ)
    complexity_bound(risk, c_hat, data.len(), delta / 2.0, tau)
}

/// Upper bound `2B‖θ - θ0‖` on the worst-context KL between two softmax policies.
pub fn trpo_kl_upper(
    theta: &SoftmaxPolicy,
    theta0: &SoftmaxPolicy,
    norm_bound: f64,
) -> Result<f64> {
    Ok(2.0 * norm_bound * param_distance_sq(theta, theta0)?.sqrt())
}
