use crate::data::LoggedDataset;
use crate::error::{CrmError, Result};
use crate::estimators::{check_tau, mean_clipped_reward, mean_param_risk};
use crate::policy::{param_distance_sq, MixedLogitSpec};

use super::SigmaMode;

/// Minimizer over `(0, σ0]` of `σB²m/2 - d ln σ / (τ(n-1))`, where `m` is the
/// mean clipped inverse-propensity reward.
pub fn closed_form_sigma(
    data: &LoggedDataset,
    tau: f64,
    norm_bound: f64,
    d_effective: usize,
    sigma0: f64,
) -> Result<f64> {
    check_tau(tau)?;
    if !(norm_bound > 0.0 && norm_bound.is_finite()) {
        return Err(CrmError::arg(format!(
            "norm bound must be positive, got {norm_bound}"
        )));
    }
    if !(sigma0 > 0.0) {
        return Err(CrmError::arg(format!(
            "sigma0 must be positive, got {sigma0}"
        )));
    }
    if data.len() < 2 {
        return Err(CrmError::arg(
            "closed-form sigma needs at least two records",
        ));
    }
    let m = mean_clipped_reward(data, tau)?;
    if m == 0.0 {
        return Ok(sigma0);
    }
    let n1 = (data.len() - 1) as f64;
    let unconstrained = 2.0 * d_effective as f64 / (norm_bound * norm_bound * tau * n1 * m);
    Ok(unconstrained.min(sigma0))
}

/// σ to report with a policy trained on `data`.
pub fn resolve_sigma(
    mode: SigmaMode,
    data: &LoggedDataset,
    tau: f64,
    d_effective: usize,
    sigma0: f64,
) -> Result<f64> {
    match mode {
        SigmaMode::InverseN => Ok((1.0 / data.len() as f64).min(sigma0)),
        SigmaMode::ClosedForm => {
            let b = data.feature_norm_bound();
            if b == 0.0 {
                // All contexts are zero: the weights never matter.
                return Ok(sigma0);
            }
            closed_form_sigma(data, tau, b, d_effective, sigma0)
        }
        SigmaMode::Fixed(s) => Ok(s),
    }
}

/// `mean_param_risk + ‖θ̂-θ0‖²/(σ0 τ (n-1)) - d ln σ/(τ (n-1))` with `d = k·d`.
pub fn nonconvex_bcrm_value(spec: &MixedLogitSpec, data: &LoggedDataset, tau: f64) -> Result<f64> {
    let sigma = spec.variance;
    if !(sigma > 0.0 && sigma <= spec.prior_variance) {
        return Err(CrmError::arg(format!(
            "sigma {sigma} must lie in (0, sigma0 = {}]",
            spec.prior_variance
        )));
    }
    if data.len() < 2 {
        return Err(CrmError::arg("objective needs at least two records"));
    }
    let risk = mean_param_risk(&spec.mean, sigma, data.feature_norm_bound(), data, tau)?;
    let dist = param_distance_sq(&spec.mean, &spec.prior_mean)?;
    let scale = tau * (data.len() - 1) as f64;
    let dim = spec.mean.weight_count() as f64;
    Ok(risk + dist / (spec.prior_variance * scale) - dim * sigma.ln() / scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LogRecord;
    use crate::policy::SoftmaxPolicy;

    fn logs(n: usize, reward: f64, propensity: f64) -> LoggedDataset {
        let records = (0..n)
            .map(|_| LogRecord {
                features: vec![1.0],
                action: 0,
                propensity,
                reward,
            })
            .collect();
        LoggedDataset::new(records, 1, 2).unwrap()
    }

    #[test]
    fn closed_form_cases() {
        // m = 1 with p = 1, r = 1.
        let d = logs(11, 1.0, 1.0);
        let s = closed_form_sigma(&d, 0.1, 1.0, 2, 1e9).unwrap();
        assert!((s - 4.0).abs() <= 1e-12);
        assert_eq!(closed_form_sigma(&d, 0.1, 1.0, 2, 1e-6).unwrap(), 1e-6);
        assert_eq!(
            closed_form_sigma(&logs(5, 0.0, 0.5), 0.1, 1.0, 2, 3.0).unwrap(),
            3.0
        );
    }

    #[test]
    fn nonconvex_zero_reward_case() {
        let d = logs(21, 0.0, 0.5);
        let prior = SoftmaxPolicy::zeros(1, 2);
        let spec = MixedLogitSpec::new(prior.clone(), 0.5, prior, 0.5).unwrap();
        let v = nonconvex_bcrm_value(&spec, &d, 0.1).unwrap();
        let expected = 1.0 - 2.0 * 0.5f64.ln() / (0.1 * 20.0);
        assert!((v - expected).abs() <= 1e-12);
    }
}
