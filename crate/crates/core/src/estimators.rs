//! Risk estimators over logged feedback and supervised test metrics.
//!
//! Truncation comes in two flavours and each estimator uses exactly one:
//! the PAC-Bayes machinery floors the propensity (`max(p, τ)`), while the
//! variance statistic used by POEM caps the importance ratio (`min(π/p, 1/τ)`).

use crate::data::{LabeledDataset, LoggedDataset};
use crate::error::{CrmError, Result};
use crate::numeric::{self, KahanSum};
use crate::policy::SoftmaxPolicy;

/// Truncation level used by every experiment unless overridden.
pub const DEFAULT_TAU: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    Ips,
    TruncatedIps,
    MeanParam,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskEstimate {
    pub value: f64,
    pub kind: EstimatorKind,
    pub tau: Option<f64>,
}

pub(crate) fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(CrmError::arg(format!("tau must lie in (0, 1), got {tau}")));
    }
    Ok(())
}

fn check_policy(policy: &SoftmaxPolicy, d: usize, k: usize) -> Result<()> {
    if policy.d() != d || policy.k() != k {
        return Err(CrmError::dims(
            format!("{k}x{d} policy"),
            format!("{}x{} policy", policy.k(), policy.d()),
        ));
    }
    Ok(())
}

/// π(a_i | x_i) for every record.
pub fn logged_action_probs(policy: &SoftmaxPolicy, data: &LoggedDataset) -> Result<Vec<f64>> {
    check_policy(policy, data.d(), data.k())?;
    let mut probs = vec![0.0; policy.k()];
    Ok(data
        .records()
        .iter()
        .map(|r| {
            policy.probs_into(&r.features, &mut probs);
            probs[r.action]
        })
        .collect())
}

fn weighted_risk(
    policy: &SoftmaxPolicy,
    data: &LoggedDataset,
    denom: impl Fn(f64) -> f64,
) -> Result<f64> {
    let probs = logged_action_probs(policy, data)?;
    let total: KahanSum = data
        .records()
        .iter()
        .zip(&probs)
        .map(|(r, pi)| r.reward * pi / denom(r.propensity))
        .collect();
    Ok(1.0 - total.total() / data.len() as f64)
}

/// `1 - (1/n) Σ r_i π(a_i|x_i) / p_i`.
pub fn ips_risk(policy: &SoftmaxPolicy, data: &LoggedDataset) -> Result<f64> {
    weighted_risk(policy, data, |p| p)
}

/// `1 - (1/n) Σ r_i π(a_i|x_i) / max(p_i, τ)`.
pub fn truncated_ips_risk(policy: &SoftmaxPolicy, data: &LoggedDataset, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    weighted_risk(policy, data, |p| p.max(tau))
}

/// `(1/n) Σ r_i / max(p_i, τ)`, the clipped inverse-propensity reward mass.
pub fn mean_clipped_reward(data: &LoggedDataset, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    let total: KahanSum = data
        .records()
        .iter()
        .map(|r| r.reward / r.propensity.max(tau))
        .collect();
    Ok(total.total() / data.len() as f64)
}

/// Truncated IPS risk of the mean weights, with the mixed-logit lower
/// probability bound `exp(-σB²/2)` folded in.
pub fn mean_param_risk(
    mean: &SoftmaxPolicy,
    sigma: f64,
    norm_bound: f64,
    data: &LoggedDataset,
    tau: f64,
) -> Result<f64> {
    if !(sigma >= 0.0) {
        return Err(CrmError::arg(format!(
            "sigma must be nonnegative, got {sigma}"
        )));
    }
    if norm_bound < data.max_feature_norm() {
        return Err(CrmError::arg(format!(
            "norm bound {norm_bound} below the largest context norm {}",
            data.max_feature_norm()
        )));
    }
    let truncated = truncated_ips_risk(mean, data, tau)?;
    let shrink = (-0.5 * sigma * norm_bound * norm_bound).exp();
    Ok(1.0 - shrink * (1.0 - truncated))
}

/// `u_i = r_i · min(π(a_i|x_i)/p_i, 1/τ)` for every record.
pub fn ratio_clipped_terms(
    policy: &SoftmaxPolicy,
    data: &LoggedDataset,
    tau: f64,
) -> Result<Vec<f64>> {
    check_tau(tau)?;
    let probs = logged_action_probs(policy, data)?;
    Ok(data
        .records()
        .iter()
        .zip(probs)
        .map(|(r, pi)| r.reward * (pi / r.propensity).min(1.0 / tau))
        .collect())
}

/// Unbiased sample variance of the ratio-clipped IPS terms.
pub fn poem_sample_variance(policy: &SoftmaxPolicy, data: &LoggedDataset, tau: f64) -> Result<f64> {
    if data.len() < 2 {
        return Err(CrmError::arg("sample variance needs at least two records"));
    }
    let u = ratio_clipped_terms(policy, data, tau)?;
    Ok(numeric::sample_variance(&u).expect("n >= 2"))
}

/// Mean probability the policy assigns to the true label.
pub fn expected_reward_stochastic(policy: &SoftmaxPolicy, test: &LabeledDataset) -> Result<f64> {
    check_policy(policy, test.d(), test.k())?;
    let mut probs = vec![0.0; policy.k()];
    let total: KahanSum = test
        .examples()
        .iter()
        .map(|e| {
            policy.probs_into(&e.features, &mut probs);
            probs[e.label]
        })
        .collect();
    Ok(total.total() / test.len() as f64)
}

/// Accuracy of the deterministic argmax policy.
pub fn argmax_accuracy(policy: &SoftmaxPolicy, test: &LabeledDataset) -> Result<f64> {
    check_policy(policy, test.d(), test.k())?;
    let mut logits = vec![0.0; policy.k()];
    let hits = test
        .examples()
        .iter()
        .filter(|e| {
            policy.logits_into(&e.features, &mut logits);
            crate::policy::argmax(&logits) == e.label
        })
        .count();
    Ok(hits as f64 / test.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{LabeledExample, LogRecord};
    use proptest::prelude::*;

    /// d = 1, x = 1 policy whose probability on action 0 is `p0` (k = 2).
    fn policy_with_prob(p0: f64) -> SoftmaxPolicy {
        let logit = (p0 / (1.0 - p0)).ln();
        SoftmaxPolicy::new(1, 2, vec![logit, 0.0], vec![0.0, 0.0]).unwrap()
    }

    fn single(p: f64, r: f64) -> LoggedDataset {
        LoggedDataset::new(
            vec![LogRecord {
                features: vec![1.0],
                action: 0,
                propensity: p,
                reward: r,
            }],
            1,
            2,
        )
        .unwrap()
    }

    #[test]
    fn zero_rewards_give_unit_risk() {
        let data = single(0.3, 0.0);
        let pi = policy_with_prob(0.8);
        assert_eq!(ips_risk(&pi, &data).unwrap(), 1.0);
        assert_eq!(truncated_ips_risk(&pi, &data, 0.01).unwrap(), 1.0);
    }

    #[test]
    fn single_record_values() {
        let pi = SoftmaxPolicy::zeros(1, 2);
        assert!(ips_risk(&pi, &single(0.5, 1.0)).unwrap().abs() < 1e-15);
        let r = truncated_ips_risk(&pi, &single(0.005, 1.0), 0.01).unwrap();
        assert!((r - (-49.0)).abs() < 1e-12);
        let r = truncated_ips_risk(&pi, &single(0.5, 1.0), 0.6).unwrap();
        assert!((r - (1.0 - 0.5 / 0.6)).abs() < 1e-15);
        assert!((r - 0.1667).abs() < 1e-4);
    }

    #[test]
    fn logging_policy_on_its_own_logs() {
        let pi = policy_with_prob(0.7);
        let data = LoggedDataset::new(
            vec![
                LogRecord {
                    features: vec![1.0],
                    action: 0,
                    propensity: 0.7,
                    reward: 1.0,
                },
                LogRecord {
                    features: vec![1.0],
                    action: 1,
                    propensity: 0.3,
                    reward: 1.0,
                },
            ],
            1,
            2,
        )
        .unwrap();
        assert!(ips_risk(&pi, &data).unwrap().abs() < 1e-12);
    }

    #[test]
    fn tau_validation() {
        let pi = SoftmaxPolicy::zeros(1, 2);
        for tau in [0.0, 1.0, -0.5, f64::NAN] {
            assert!(truncated_ips_risk(&pi, &single(0.5, 1.0), tau).is_err());
        }
    }

    #[test]
    fn mean_param_values() {
        let pi = SoftmaxPolicy::zeros(1, 2);
        let data = single(0.2, 1.0);
        let t = truncated_ips_risk(&pi, &data, 0.01).unwrap();
        assert_eq!(mean_param_risk(&pi, 0.0, 1.0, &data, 0.01).unwrap(), t);
        assert!((mean_param_risk(&pi, 1e6, 1.0, &data, 0.01).unwrap() - 1.0).abs() < 1e-12);
        assert!(mean_param_risk(&pi, -1.0, 1.0, &data, 0.01).is_err());
        // truncated value 0.2 and σB² = 2: 1 - e^{-1}·0.8
        let p = policy_with_prob(0.8);
        let data = LoggedDataset::new(
            vec![LogRecord {
                features: vec![1.0],
                action: 0,
                propensity: 1.0,
                reward: 1.0,
            }],
            1,
            2,
        )
        .unwrap();
        assert!((truncated_ips_risk(&p, &data, 0.01).unwrap() - 0.2).abs() < 1e-12);
        let v = mean_param_risk(&p, 2.0, 1.0, &data, 0.01).unwrap();
        assert!((v - (1.0 - (-1.0f64).exp() * 0.8)).abs() < 1e-12);
        assert!((v - 0.70570).abs() < 1e-4);
    }

    #[test]
    fn poem_variance_cases() {
        let pi = SoftmaxPolicy::zeros(1, 2);
        let same = LoggedDataset::new(
            vec![
                LogRecord {
                    features: vec![1.0],
                    action: 0,
                    propensity: 0.5,
                    reward: 1.0
                };
                3
            ],
            1,
            2,
        )
        .unwrap();
        assert_eq!(poem_sample_variance(&pi, &same, 0.01).unwrap(), 0.0);

        // u = (0, 1)
        let two = LoggedDataset::new(
            vec![
                LogRecord {
                    features: vec![1.0],
                    action: 0,
                    propensity: 0.5,
                    reward: 0.0,
                },
                LogRecord {
                    features: vec![1.0],
                    action: 0,
                    propensity: 0.5,
                    reward: 1.0,
                },
            ],
            1,
            2,
        )
        .unwrap();
        assert!((poem_sample_variance(&pi, &two, 0.01).unwrap() - 0.5).abs() < 1e-15);
        assert!(poem_sample_variance(&pi, &single(0.5, 1.0), 0.01).is_err());

        // π/p = 1000 is capped at 1/τ = 100.
        let p = policy_with_prob(0.5);
        let tiny = single(0.0005, 1.0);
        assert_eq!(ratio_clipped_terms(&p, &tiny, 0.01).unwrap(), vec![100.0]);
    }

    #[test]
    fn supervised_metrics() {
        let test = LabeledDataset::new(
            (0..20)
                .map(|i| LabeledExample {
                    features: vec![i as f64 / 10.0],
                    label: i % 10,
                })
                .collect(),
            1,
            10,
        )
        .unwrap();
        let uniform = SoftmaxPolicy::zeros(1, 10);
        assert!((expected_reward_stochastic(&uniform, &test).unwrap() - 0.1).abs() < 1e-15);
        // Ties go to action 0, so accuracy equals the label-0 fraction.
        assert!((argmax_accuracy(&uniform, &test).unwrap() - 0.1).abs() < 1e-15);

        // A huge bias on the only label present is a perfect policy.
        let test = LabeledDataset::new(
            vec![
                LabeledExample {
                    features: vec![0.3],
                    label: 2
                };
                5
            ],
            1,
            3,
        )
        .unwrap();
        let perfect = SoftmaxPolicy::new(1, 3, vec![0.0; 3], vec![0.0, 0.0, 1e3]).unwrap();
        assert_eq!(expected_reward_stochastic(&perfect, &test).unwrap(), 1.0);
        assert_eq!(argmax_accuracy(&perfect, &test).unwrap(), 1.0);
    }

    fn arb_case() -> impl Strategy<Value = (SoftmaxPolicy, LoggedDataset, f64)> {
        let record = (
            prop::collection::vec(-2.0..2.0f64, 2),
            0usize..3,
            1e-4..=1.0f64,
            0.0..=1.0f64,
        )
            .prop_map(|(features, action, propensity, reward)| LogRecord {
                features,
                action,
                propensity,
                reward,
            });
        (
            prop::collection::vec(-3.0..3.0f64, 6),
            prop::collection::vec(-1.0..1.0f64, 3),
            prop::collection::vec(record, 2..30),
            1e-3..0.999f64,
        )
            .prop_map(|(w, b, recs, tau)| {
                (
                    SoftmaxPolicy::new(2, 3, w, b).unwrap(),
                    LoggedDataset::new(recs, 2, 3).unwrap(),
                    tau,
                )
            })
    }

    proptest! {
        #[test]
        fn truncation_orders_and_ranges((pi, data, tau) in arb_case()) {
            let ips = ips_risk(&pi, &data).unwrap();
            let trunc = truncated_ips_risk(&pi, &data, tau).unwrap();
            prop_assert!(trunc >= ips - 1e-12);
            prop_assert!(trunc <= 1.0 + 1e-12);
            prop_assert!(trunc >= 1.0 - 1.0 / tau - 1e-12);
        }

        #[test]
        fn mean_param_monotone_in_sigma((pi, data, tau) in arb_case(), s1 in 0.0..5.0f64, s2 in 0.0..5.0f64) {
            let b = data.feature_norm_bound();
            let (lo, hi) = if s1 < s2 { (s1, s2) } else { (s2, s1) };
            let trunc = truncated_ips_risk(&pi, &data, tau).unwrap();
            let at_lo = mean_param_risk(&pi, lo, b, &data, tau).unwrap();
            let at_hi = mean_param_risk(&pi, hi, b, &data, tau).unwrap();
            prop_assert!(at_lo <= at_hi + 1e-12);
            prop_assert!(at_lo >= trunc - 1e-12);
        }

        #[test]
        fn variance_matches_naive_two_pass((pi, data, tau) in arb_case()) {
            let u = ratio_clipped_terms(&pi, &data, tau).unwrap();
            let n = u.len() as f64;
            let mean = u.iter().sum::<f64>() / n;
            let naive = u.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let got = poem_sample_variance(&pi, &data, tau).unwrap();
            prop_assert!((got - naive).abs() <= 1e-10 * naive.max(1.0));
        }
    }
}
