use crate::data::LoggedDataset;
use crate::error::{CrmError, Result};
use crate::numeric::KahanSum;
use crate::policy::SoftmaxPolicy;

use super::{Objective, TrainConfig};

/// Gradient with the same layout as a [`SoftmaxPolicy`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Gradient {
    pub fn zeros_like(policy: &SoftmaxPolicy) -> Self {
        Self {
            weights: vec![0.0; policy.weight_count()],
            biases: vec![0.0; policy.k()],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.weights.iter().chain(&self.biases).copied()
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(f64::is_finite)
    }

    pub fn norm(&self) -> f64 {
        self.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    /// Adds `scale · dz_a · x` to weight row `a` and `scale · dz_a` to bias `a`.
    pub(crate) fn add_logit_grad(&mut self, x: &[f64], dz: &[f64], scale: f64) {
        let d = x.len();
        for (a, &g) in dz.iter().enumerate() {
            let g = g * scale;
            if g == 0.0 {
                continue;
            }
            for (w, xi) in self.weights[a * d..(a + 1) * d].iter_mut().zip(x) {
                *w += g * xi;
            }
            self.biases[a] += g;
        }
    }
}

pub(crate) fn check_prior<'a>(
    objective: Objective,
    policy: &SoftmaxPolicy,
    prior: Option<&'a SoftmaxPolicy>,
) -> Result<Option<&'a SoftmaxPolicy>> {
    match (objective.needs_prior(), prior) {
        (true, None) => Err(CrmError::arg(format!(
            "{objective} regularizes toward a prior policy, but none was given"
        ))),
        (false, Some(_)) => Err(CrmError::arg(format!(
            "{objective} does not take a prior policy"
        ))),
        (_, Some(p)) if !p.same_shape(policy) => Err(CrmError::dims(
            format!("{}x{} prior", policy.k(), policy.d()),
            format!("{}x{} prior", p.k(), p.d()),
        )),
        (_, p) => Ok(p),
    }
}

pub(crate) fn check_data(policy: &SoftmaxPolicy, data: &LoggedDataset) -> Result<()> {
    if policy.d() != data.d() || policy.k() != data.k() {
        return Err(CrmError::dims(
            format!("{}x{} data", data.k(), data.d()),
            format!("{}x{} policy", policy.k(), policy.d()),
        ));
    }
    Ok(())
}

/// Squared-distance penalty value; adds its gradient (weights only) when given.
pub(crate) fn add_penalty(
    config: &TrainConfig,
    policy: &SoftmaxPolicy,
    prior: Option<&SoftmaxPolicy>,
    grad: Option<&mut Gradient>,
) -> f64 {
    let (strength, center) = match config.objective {
        Objective::IpsLpr | Objective::WnllLpr => (config.lambda, prior.map(|p| p.weights())),
        Objective::IpsL2 | Objective::LoggingNll => (config.lambda, None),
        Objective::PoemL2 => (config.lambda_l2, None),
        Objective::Poem => return 0.0,
    };
    let w = policy.weights();
    let diff = |i: usize| w[i] - center.map_or(0.0, |c| c[i]);
    if let Some(g) = grad {
        for (i, gw) in g.weights.iter_mut().enumerate() {
            *gw += 2.0 * strength * diff(i);
        }
    }
    strength * (0..w.len()).map(|i| diff(i) * diff(i)).sum::<f64>()
}

/// Per-record workspace.
pub(crate) struct Scratch {
    pub probs: Vec<f64>,
    pub dz: Vec<f64>,
}

impl Scratch {
    pub fn new(k: usize) -> Self {
        Self {
            probs: vec![0.0; k],
            dz: vec![0.0; k],
        }
    }

    /// `dz ← coef · ∂π_a/∂z = coef · π_a (e_a - π)`.
    pub fn prob_grad(&mut self, action: usize, coef: f64) {
        let pa = self.probs[action];
        for (j, (dz, &pj)) in self.dz.iter_mut().zip(&self.probs).enumerate() {
            let delta = if j == action { 1.0 } else { 0.0 };
            *dz = coef * pa * (delta - pj);
        }
    }

    /// `dz ← coef · ∂ln π_a/∂z = coef · (e_a - π)`.
    pub fn log_prob_grad(&mut self, action: usize, coef: f64) {
        for (j, (dz, &pj)) in self.dz.iter_mut().zip(&self.probs).enumerate() {
            let delta = if j == action { 1.0 } else { 0.0 };
            *dz = coef * (delta - pj);
        }
    }
}

/// Mean data term over `batch` (and its gradient when requested), excluding
/// any penalty. Handles the separable objectives only.
fn separable_terms(
    config: &TrainConfig,
    policy: &SoftmaxPolicy,
    data: &LoggedDataset,
    batch: &[usize],
    mut grad: Option<&mut Gradient>,
) -> f64 {
    let tau = config.tau;
    let mut scratch = Scratch::new(policy.k());
    let mut total = KahanSum::new();
    let inv = 1.0 / batch.len() as f64;
    for &i in batch {
        let r = &data.records()[i];
        policy.probs_into(&r.features, &mut scratch.probs);
        let pa = scratch.probs[r.action];
        let weight = r.reward / r.propensity.max(tau);
        match config.objective {
            Objective::IpsLpr | Objective::IpsL2 => {
                total.add(-weight * pa);
                if grad.is_some() && weight != 0.0 {
                    scratch.prob_grad(r.action, -weight);
                }
            }
            Objective::WnllLpr => {
                if weight != 0.0 {
                    total.add(-weight * pa.ln());
                    if grad.is_some() {
                        scratch.log_prob_grad(r.action, -weight);
                    }
                }
            }
            Objective::LoggingNll => {
                total.add(-pa.ln());
                if grad.is_some() {
                    scratch.log_prob_grad(r.action, -1.0);
                }
            }
            Objective::Poem | Objective::PoemL2 => unreachable!("POEM is not separable"),
        }
        let skip = weight == 0.0 && config.objective != Objective::LoggingNll;
        if let (Some(g), false) = (grad.as_deref_mut(), skip) {
            g.add_logit_grad(&r.features, &scratch.dz, inv);
        }
    }
    total.total() * inv
}

/// Exact POEM data term `-ū + λ sqrt(S/n)` over `batch`, with gradient.
fn poem_terms(
    config: &TrainConfig,
    policy: &SoftmaxPolicy,
    data: &LoggedDataset,
    batch: &[usize],
    grad: Option<&mut Gradient>,
) -> Result<f64> {
    let n = batch.len();
    if n < 2 {
        return Err(CrmError::arg("POEM needs at least two records"));
    }
    let cap = 1.0 / config.tau;
    let mut scratch = Scratch::new(policy.k());
    let u: Vec<f64> = batch
        .iter()
        .map(|&i| {
            let r = &data.records()[i];
            policy.probs_into(&r.features, &mut scratch.probs);
            r.reward * (scratch.probs[r.action] / r.propensity).min(cap)
        })
        .collect();
    let nf = n as f64;
    let mean = u.iter().copied().collect::<KahanSum>().total() / nf;
    let var = u
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .collect::<KahanSum>()
        .total()
        / (nf - 1.0);
    let value = -mean + config.lambda * (var / nf).sqrt();

    if let Some(g) = grad {
        // dF/du_i = -1/n + λ (u_i - ū) / ((n - 1) sqrt(n S))
        let var_coef = if var > 0.0 {
            config.lambda / ((nf - 1.0) * (nf * var).sqrt())
        } else {
            0.0
        };
        for (&i, &ui) in batch.iter().zip(&u) {
            let r = &data.records()[i];
            policy.probs_into(&r.features, &mut scratch.probs);
            let ratio = scratch.probs[r.action] / r.propensity;
            if r.reward == 0.0 || ratio >= cap {
                continue;
            }
            let df_du = -1.0 / nf + var_coef * (ui - mean);
            scratch.prob_grad(r.action, df_du * r.reward / r.propensity);
            g.add_logit_grad(&r.features, &scratch.dz, 1.0);
        }
    }
    Ok(value)
}

/// Objective value over `batch`, with the gradient when requested.
pub(crate) fn evaluate_batch(
    config: &TrainConfig,
    policy: &SoftmaxPolicy,
    prior: Option<&SoftmaxPolicy>,
    data: &LoggedDataset,
    batch: &[usize],
    want_grad: bool,
) -> Result<(f64, Option<Gradient>)> {
    check_data(policy, data)?;
    let prior = check_prior(config.objective, policy, prior)?;
    if batch.is_empty() {
        return Err(CrmError::arg("empty batch"));
    }
    let mut grad = want_grad.then(|| Gradient::zeros_like(policy));
    let data_term = if config.objective.is_poem() {
        poem_terms(config, policy, data, batch, grad.as_mut())?
    } else {
        separable_terms(config, policy, data, batch, grad.as_mut())
    };
    let penalty = add_penalty(config, policy, prior, grad.as_mut());
    Ok((data_term + penalty, grad))
}

/// Full-data objective. The additive constant one of the IPS risk is omitted.
pub fn objective_value(
    config: &TrainConfig,
    policy: &SoftmaxPolicy,
    prior: Option<&SoftmaxPolicy>,
    data: &LoggedDataset,
) -> Result<f64> {
    let all: Vec<usize> = (0..data.len()).collect();
    Ok(evaluate_batch(config, policy, prior, data, &all, false)?.0)
}

/// Gradient of the objective restricted to `batch`: the data term is a batch
/// mean, the penalty enters at full strength. For POEM the batch is treated
/// as the whole sample.
pub fn objective_gradient(
    config: &TrainConfig,
    policy: &SoftmaxPolicy,
    prior: Option<&SoftmaxPolicy>,
    data: &LoggedDataset,
    batch: &[usize],
) -> Result<Gradient> {
    Ok(evaluate_batch(config, policy, prior, data, batch, true)?
        .1
        .expect("gradient requested"))
}
