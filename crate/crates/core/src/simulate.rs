//! Supervised-to-bandit conversion.
//!
//! A labeled multiclass dataset becomes logged bandit feedback by letting a
//! logging policy pick a label for every example: the logged propensity is the
//! exact softmax probability of the pick and the reward is one when the pick
//! matches the true label.

use rand::seq::SliceRandom;

use crate::data::{LabeledDataset, LogRecord, LoggedDataset};
use crate::error::{CrmError, Result};
use crate::policy::{gumbel_argmax, SoftmaxPolicy};
use crate::seed;

/// Multiplies every weight and bias by the inverse temperature `kappa`.
pub fn temper(policy: &SoftmaxPolicy, kappa: f64) -> SoftmaxPolicy {
    policy.tempered(kappa)
}

/// Logs one action per example, sampled with a single sequential RNG stream.
pub fn simulate_logs(
    logging_policy: &SoftmaxPolicy,
    data: &LabeledDataset,
    seed: u64,
) -> Result<LoggedDataset> {
    if logging_policy.d() != data.d() || logging_policy.k() != data.k() {
        return Err(CrmError::dims(
            format!("{}x{} data", data.k(), data.d()),
            format!("{}x{} policy", logging_policy.k(), logging_policy.d()),
        ));
    }
    let mut rng = seed::rng_from(seed::derive(seed, "simulate"));
    let k = logging_policy.k();
    let mut logits = vec![0.0; k];
    let mut probs = vec![0.0; k];
    let records = data
        .examples()
        .iter()
        .map(|ex| {
            logging_policy.logits_into(&ex.features, &mut logits);
            let action = gumbel_argmax(&logits, &mut rng);
            logging_policy.probs_into(&ex.features, &mut probs);
            LogRecord {
                features: ex.features.clone(),
                action,
                propensity: probs[action],
                reward: if action == ex.label { 1.0 } else { 0.0 },
            }
        })
        .collect();
    LoggedDataset::new(records, data.d(), data.k())
}

/// How repeated trials draw the examples reserved for fitting the logging policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplitMode {
    /// Each trial draws its own sample without replacement.
    #[default]
    Independent,
    /// Trials take consecutive, non-overlapping slices of one permutation.
    Disjoint,
}

/// Index sets for one trial of the conversion protocol.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConversionSplit {
    /// Examples used to fit the logging policy with full supervision.
    pub logging: Vec<usize>,
    /// The remaining examples, which receive logged actions.
    pub logged: Vec<usize>,
}

pub fn conversion_split(
    n: usize,
    n_logging: usize,
    trial: usize,
    mode: SplitMode,
    seed: u64,
) -> Result<ConversionSplit> {
    let mut order: Vec<usize> = (0..n).collect();
    let (start, perm_seed) = match mode {
        SplitMode::Independent => (0, seed::derive_indexed(seed, "split", trial as u64)),
        SplitMode::Disjoint => (trial * n_logging, seed::derive(seed, "split-disjoint")),
    };
    let end = start + n_logging;
    if end >= n {
        return Err(CrmError::arg(format!(
            "trial {trial} needs {end} logging examples plus at least one logged example, have {n}"
        )));
    }
    order.shuffle(&mut seed::rng_from(perm_seed));
    let mut logging: Vec<usize> = order[start..end].to_vec();
    let mut logged: Vec<usize> = order[..start]
        .iter()
        .chain(&order[end..])
        .copied()
        .collect();
    logging.sort_unstable();
    logged.sort_unstable();
    Ok(ConversionSplit { logging, logged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LabeledExample;

    fn labeled(n: usize, d: usize, k: usize, label: impl Fn(usize) -> usize) -> LabeledDataset {
        let examples = (0..n)
            .map(|i| LabeledExample {
                features: (0..d)
                    .map(|j| ((i * 7 + j * 3) % 11) as f64 / 11.0)
                    .collect(),
                label: label(i),
            })
            .collect();
        LabeledDataset::new(examples, d, k).unwrap()
    }

    #[test]
    fn uniform_policy_logs_uniform_propensities() {
        let data = labeled(50, 3, 4, |i| i % 4);
        let logs = simulate_logs(&SoftmaxPolicy::zeros(3, 4), &data, 1).unwrap();
        assert!(logs.records().iter().all(|r| r.propensity == 0.25));
    }

    #[test]
    fn simulation_is_deterministic() {
        let data = labeled(100, 2, 3, |i| i % 3);
        let p =
            SoftmaxPolicy::new(2, 3, vec![1.0, -1.0, 0.5, 0.5, -2.0, 0.0], vec![0.0; 3]).unwrap();
        assert_eq!(
            simulate_logs(&p, &data, 42).unwrap(),
            simulate_logs(&p, &data, 42).unwrap()
        );
        assert_ne!(
            simulate_logs(&p, &data, 42).unwrap(),
            simulate_logs(&p, &data, 43).unwrap()
        );
    }

    #[test]
    fn logged_propensity_matches_policy() {
        let data = labeled(200, 2, 3, |i| i % 3);
        let p = SoftmaxPolicy::new(
            2,
            3,
            vec![1.0, -1.0, 0.5, 0.5, -2.0, 0.0],
            vec![0.1, 0.2, 0.3],
        )
        .unwrap();
        let logs = simulate_logs(&p, &data, 7).unwrap();
        for r in logs.records() {
            let q = p.action_probs(&r.features).unwrap().prob(r.action);
            assert!((q - r.propensity).abs() <= 1e-12);
        }
    }

    #[test]
    fn peaked_policy_reward_rate() {
        // Single zero-feature context, bias puts 0.99 on the true label 0.
        let n = 10_000;
        let data = LabeledDataset::new(
            vec![
                LabeledExample {
                    features: vec![0.0],
                    label: 0
                };
                n
            ],
            1,
            2,
        )
        .unwrap();
        let logit = (0.99f64 / 0.01).ln();
        let p = SoftmaxPolicy::new(1, 2, vec![0.0, 0.0], vec![logit, 0.0]).unwrap();
        let logs = simulate_logs(&p, &data, 3).unwrap();
        let mean = logs.records().iter().map(|r| r.reward).sum::<f64>() / n as f64;
        assert!((mean - 0.99).abs() <= 3.0 * (0.0099f64 / n as f64).sqrt());
    }

    #[test]
    fn dimension_mismatch() {
        let data = labeled(5, 2, 3, |_| 0);
        assert!(simulate_logs(&SoftmaxPolicy::zeros(3, 3), &data, 0).is_err());
    }

    #[test]
    fn temper_composes() {
        let p = SoftmaxPolicy::new(1, 2, vec![0.3, -1.7], vec![2.5, 0.1]).unwrap();
        for (a, b) in [(0.5, 0.4), (2.0, 0.25), (0.0, 3.0)] {
            assert_eq!(temper(&p, a * b), temper(&temper(&p, a), b));
        }
    }

    #[test]
    fn split_modes() {
        let s = conversion_split(100, 10, 0, SplitMode::Independent, 1).unwrap();
        assert_eq!((s.logging.len(), s.logged.len()), (10, 90));
        let a = conversion_split(100, 10, 0, SplitMode::Disjoint, 1).unwrap();
        let b = conversion_split(100, 10, 1, SplitMode::Disjoint, 1).unwrap();
        assert!(a.logging.iter().all(|i| !b.logging.contains(i)));
        assert!(conversion_split(100, 10, 9, SplitMode::Disjoint, 1).is_err());
        assert_eq!(
            conversion_split(100, 10, 3, SplitMode::Independent, 1).unwrap(),
            conversion_split(100, 10, 3, SplitMode::Independent, 1).unwrap()
        );
    }
}
