//! Training objectives and optimizers.
//!
//! Parameters are always a [`SoftmaxPolicy`]: a `k × d` weight block that
//! every regularizer sees, and `k` biases that no regularizer touches.

mod objective;
mod poem;
mod rerm;
mod sigma;
mod train;
mod tune;

pub use objective::{objective_gradient, objective_value, Gradient};
pub use poem::{poem_build_surrogate, PoemSurrogate};
pub use rerm::{logging_nll_gradient, logging_nll_value, solve_rerm, RermSolution};
pub use sigma::{closed_form_sigma, nonconvex_bcrm_value, resolve_sigma};
pub use train::{
    fit_supervised, learn_logging_policy, train, two_step_learned_lpr, AdaGradState, EpochStat,
    TrainReport, TwoStepOutcome,
};
pub use tune::{cross_validate, CvConfig, CvResult, CvRow, TuneTarget};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{CrmError, Result};
use crate::estimators::DEFAULT_TAU;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Truncated IPS with logging-policy regularization.
    IpsLpr,
    /// Propensity-weighted negative log-likelihood with logging-policy regularization.
    WnllLpr,
    /// Truncated IPS with plain L2 regularization.
    IpsL2,
    /// Ratio-clipped IPS with sample-variance regularization.
    Poem,
    /// POEM plus an L2 term weighted by `lambda_l2`.
    PoemL2,
    /// Regularized NLL of the logged actions; rewards are ignored.
    LoggingNll,
}

impl Objective {
    pub const ALL: [Objective; 6] = [
        Objective::IpsLpr,
        Objective::WnllLpr,
        Objective::IpsL2,
        Objective::Poem,
        Objective::PoemL2,
        Objective::LoggingNll,
    ];

    /// Whether the objective regularizes toward a prior policy.
    pub fn needs_prior(self) -> bool {
        matches!(self, Objective::IpsLpr | Objective::WnllLpr)
    }

    pub fn is_poem(self) -> bool {
        matches!(self, Objective::Poem | Objective::PoemL2)
    }

    pub fn name(self) -> &'static str {
        match self {
            Objective::IpsLpr => "ips_lpr",
            Objective::WnllLpr => "wnll_lpr",
            Objective::IpsL2 => "ips_l2",
            Objective::Poem => "poem",
            Objective::PoemL2 => "poem_l2",
            Objective::LoggingNll => "logging_nll",
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Objective {
    type Err = CrmError;

    fn from_str(s: &str) -> Result<Self> {
        Objective::ALL
            .into_iter()
            .find(|o| o.name() == s.replace('-', "_"))
            .ok_or_else(|| CrmError::arg(format!("unknown objective {s:?}")))
    }
}

/// How the posterior variance σ reported with a trained policy is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "value")]
pub enum SigmaMode {
    /// `min(1/n, σ0)`.
    InverseN,
    /// The analytic minimizer of the σ part of the convex objective.
    ClosedForm,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub objective: Objective,
    pub lambda: f64,
    /// Extra L2 weight used only by POEM-L2.
    pub lambda_l2: f64,
    pub tau: f64,
    pub sigma0: f64,
    pub sigma_mode: SigmaMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adagrad_smoothing: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            objective: Objective::IpsLpr,
            lambda: 1e-3,
            lambda_l2: 0.0,
            tau: DEFAULT_TAU,
            sigma0: 1.0,
            sigma_mode: SigmaMode::InverseN,
            epochs: 500,
            batch_size: 100,
            learning_rate: 0.1,
            adagrad_smoothing: 1.0,
            seed: 0,
        }
    }
}

/// Regularization used when estimating a logging policy from its logs.
pub const DEFAULT_LOGGING_LAMBDA: f64 = 0.01;
/// Epoch budget for logging-policy estimation and for each tuning run.
pub const SHORT_EPOCHS: usize = 100;

impl TrainConfig {
    pub fn with_objective(objective: Objective, lambda: f64) -> Self {
        Self {
            objective,
            lambda,
            ..Self::default()
        }
    }

    /// Settings for estimating a logging policy from logged actions.
    pub fn logging_default() -> Self {
        Self {
            objective: Objective::LoggingNll,
            lambda: DEFAULT_LOGGING_LAMBDA,
            epochs: SHORT_EPOCHS,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("sigma0", self.sigma0),
            ("learning_rate", self.learning_rate),
            ("adagrad_smoothing", self.adagrad_smoothing),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CrmError::arg(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("lambda", self.lambda), ("lambda_l2", self.lambda_l2)] {
            if !(v >= 0.0) {
                return Err(CrmError::arg(format!(
                    "{name} must be nonnegative, got {v}"
                )));
            }
        }
        crate::estimators::check_tau(self.tau)?;
        if self.batch_size == 0 {
            return Err(CrmError::arg("batch_size must be positive"));
        }
        if let SigmaMode::Fixed(s) = self.sigma_mode {
            if !(s > 0.0 && s <= self.sigma0) {
                return Err(CrmError::arg(format!(
                    "fixed sigma {s} must lie in (0, sigma0 = {}]",
                    self.sigma0
                )));
            }
        }
        Ok(())
    }
}
