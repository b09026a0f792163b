use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{LabeledDataset, LogRecord, LoggedDataset};
use crate::error::{CrmError, Result};
use crate::policy::SoftmaxPolicy;
use crate::seed;

use super::objective::{add_penalty, check_data, check_prior, evaluate_batch, Gradient};
use super::poem::poem_build_surrogate;
use super::sigma::resolve_sigma;
use super::{objective_value, Objective, TrainConfig};

/// Per-parameter AdaGrad accumulators, weights first, then biases.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaGradState {
    accumulators: Vec<f64>,
    step_count: u64,
}

impl AdaGradState {
    pub fn new(policy: &SoftmaxPolicy) -> Self {
        Self {
            accumulators: vec![0.0; policy.weight_count() + policy.k()],
            step_count: 0,
        }
    }

    pub fn accumulators(&self) -> &[f64] {
        &self.accumulators
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// `θ ← θ - lr·g / (smoothing + sqrt(acc))`, after adding `g²` to `acc`.
    pub fn step(&mut self, policy: &mut SoftmaxPolicy, grad: &Gradient, lr: f64, smoothing: f64) {
        let nw = policy.weight_count();
        let (acc_w, acc_b) = self.accumulators.split_at_mut(nw);
        let update = |theta: &mut [f64], acc: &mut [f64], g: &[f64]| {
            for ((t, a), &gi) in theta.iter_mut().zip(acc.iter_mut()).zip(g) {
                *a += gi * gi;
                *t -= lr * gi / (smoothing + a.sqrt());
            }
        };
        update(policy.weights_mut(), acc_w, &grad.weights);
        update(policy.biases_mut(), acc_b, &grad.biases);
        self.step_count += 1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStat {
    pub epoch: usize,
    pub objective: f64,
    /// Seconds since training started.
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub final_policy: SoftmaxPolicy,
    pub objective_trace: Vec<EpochStat>,
    pub sigma_star: Option<f64>,
    pub wall_time: f64,
}

/// Mini-batch AdaGrad from the zero policy. POEM variants majorize the
/// variance term at the start of every epoch and descend the surrogate.
pub fn train(
    config: &TrainConfig,
    data: &LoggedDataset,
    prior: Option<&SoftmaxPolicy>,
) -> Result<TrainReport> {
    config.validate()?;
    let start = Instant::now();
    let mut policy = SoftmaxPolicy::zeros(data.d(), data.k());
    check_data(&policy, data)?;
    let prior = check_prior(config.objective, &policy, prior)?;
    if data.is_empty() {
        return Err(CrmError::arg("no records to train on"));
    }
    if config.objective.is_poem() && data.len() < 2 {
        return Err(CrmError::arg("POEM needs at least two records"));
    }

    let mut adagrad = AdaGradState::new(&policy);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = seed::rng_from(seed::derive(config.seed, "train-shuffle"));
    let mut trace = Vec::with_capacity(config.epochs);
    let nonfinite = |epoch: usize, batch: usize| CrmError::NonFinite { epoch, batch };

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let surrogate = if config.objective.is_poem() {
            Some(poem_build_surrogate(
                &policy,
                data,
                config.tau,
                config.lambda,
            )?)
        } else {
            None
        };
        let mut batches = 0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            batches = b + 1;
            let (value, grad) = match &surrogate {
                Some(s) => {
                    let (v, g) = s.batch_terms(&policy, data, batch, true)?;
                    let mut g = g.expect("gradient requested");
                    let penalty = add_penalty(config, &policy, None, Some(&mut g));
                    (v + penalty, g)
                }
                None => {
                    let (v, g) = evaluate_batch(config, &policy, prior, data, batch, true)?;
                    (v, g.expect("gradient requested"))
                }
            };
            if !value.is_finite() || !grad.is_finite() {
                return Err(nonfinite(epoch, batches));
            }
            adagrad.step(
                &mut policy,
                &grad,
                config.learning_rate,
                config.adagrad_smoothing,
            );
            if !policy
                .weights()
                .iter()
                .chain(policy.biases())
                .all(|t| t.is_finite())
            {
                return Err(nonfinite(epoch, batches));
            }
        }
        let objective = objective_value(config, &policy, prior, data)?;
        if !objective.is_finite() {
            return Err(nonfinite(epoch, batches));
        }
        trace.push(EpochStat {
            epoch,
            objective,
            wall_time: start.elapsed().as_secs_f64(),
        });
        log::debug!("epoch {epoch}: objective {objective}");
    }

    let sigma_star = match config.objective {
        Objective::LoggingNll => None,
        _ => Some(resolve_sigma(
            config.sigma_mode,
            data,
            config.tau,
            policy.weight_count(),
            config.sigma0,
        )?),
    };
    Ok(TrainReport {
        config: config.clone(),
        final_policy: policy,
        objective_trace: trace,
        sigma_star,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Fits a softmax policy to the logged actions with an L2 penalty `λ‖W‖²`,
/// ignoring rewards. Optimizer settings and seed come from `base`.
pub fn learn_logging_policy(
    data: &LoggedDataset,
    lambda: f64,
    base: &TrainConfig,
) -> Result<SoftmaxPolicy> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(CrmError::arg(format!(
            "logging-policy regularization must be positive, got {lambda}"
        )));
    }
    let config = TrainConfig {
        objective: Objective::LoggingNll,
        lambda,
        ..base.clone()
    };
    Ok(train(&config, data, None)?.final_policy)
}

/// Fully supervised fit: every label is treated as a logged action.
pub fn fit_supervised(
    data: &LabeledDataset,
    lambda: f64,
    base: &TrainConfig,
) -> Result<SoftmaxPolicy> {
    let records = data
        .examples()
        .iter()
        .map(|ex| LogRecord {
            features: ex.features.clone(),
            action: ex.label,
            propensity: 1.0,
            reward: 1.0,
        })
        .collect();
    let logs = LoggedDataset::new(records, data.d(), data.k())?;
    learn_logging_policy(&logs, lambda, base)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoStepOutcome {
    pub learned_prior: SoftmaxPolicy,
    pub report: TrainReport,
}

/// Estimates the logging policy from `data` with `logging` settings, then
/// trains `config` (an LPR objective) toward the estimate.
pub fn two_step_learned_lpr(
    data: &LoggedDataset,
    config: &TrainConfig,
    logging: &TrainConfig,
) -> Result<TwoStepOutcome> {
    if !config.objective.needs_prior() {
        return Err(CrmError::arg(format!(
            "the second step needs an LPR objective, got {}",
            config.objective
        )));
    }
    let learned_prior = learn_logging_policy(data, logging.lambda, logging)?;
    let report = train(config, data, Some(&learned_prior))?;
    Ok(TwoStepOutcome {
        learned_prior,
        report,
    })
}
