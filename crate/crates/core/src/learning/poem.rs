use crate::data::LoggedDataset;
use crate::error::{CrmError, Result};
use crate::estimators::ratio_clipped_terms;
use crate::numeric::{self, KahanSum};
use crate::policy::SoftmaxPolicy;

use super::objective::{check_data, Gradient, Scratch};

/// Quadratic upper bound on the POEM objective built at an anchor policy.
///
/// The surrogate is `(1/n) Σ (alpha·u_i + beta·u_i²) + constant`, where
/// `u_i = r_i · min(π(a_i|x_i)/p_i, 1/τ)`. Every record shares the same
/// coefficients; they depend on the anchor only through `ū_t` and `S_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoemSurrogate {
    pub alpha: f64,
    pub beta: f64,
    pub constant: f64,
    pub anchor_mean: f64,
    pub anchor_variance: f64,
    pub tau: f64,
    pub n: usize,
}

pub fn poem_build_surrogate(
    anchor: &SoftmaxPolicy,
    data: &LoggedDataset,
    tau: f64,
    lambda: f64,
) -> Result<PoemSurrogate> {
    let n = data.len();
    if n < 2 {
        return Err(CrmError::arg("POEM needs at least two records"));
    }
    if !(lambda >= 0.0) {
        return Err(CrmError::arg(format!(
            "lambda must be nonnegative, got {lambda}"
        )));
    }
    check_data(anchor, data)?;
    let u = ratio_clipped_terms(anchor, data, tau)?;
    let nf = n as f64;
    let mean = numeric::kahan_sum(u.iter().copied()) / nf;
    let var = numeric::sample_variance(&u).expect("n >= 2");

    // sqrt(v) <= sqrt(v_t)/2 + v/(2 sqrt(v_t)) and
    // Σ(u_i - ū)² <= Σu_i² - 2ū_t Σu_i + nū_t².
    let (beta, constant) = if lambda == 0.0 {
        (0.0, 0.0)
    } else if var > 0.0 {
        let beta = lambda * nf.sqrt() / (2.0 * var.sqrt() * (nf - 1.0));
        let constant = 0.5 * lambda * (var / nf).sqrt()
            + lambda * nf * mean * mean / (2.0 * (nf - 1.0) * (nf * var).sqrt());
        (beta, constant)
    } else {
        log::warn!("POEM anchor has zero sample variance; dropping the variance term this epoch");
        (0.0, 0.0)
    };
    Ok(PoemSurrogate {
        alpha: -1.0 - 2.0 * beta * mean,
        beta,
        constant,
        anchor_mean: mean,
        anchor_variance: var,
        tau,
        n,
    })
}

impl PoemSurrogate {
    fn check(&self, data: &LoggedDataset) -> Result<()> {
        if data.len() != self.n {
            return Err(CrmError::dims(
                format!("{} records", self.n),
                format!("{} records", data.len()),
            ));
        }
        Ok(())
    }

    pub fn value(&self, policy: &SoftmaxPolicy, data: &LoggedDataset) -> Result<f64> {
        self.check(data)?;
        check_data(policy, data)?;
        let u = ratio_clipped_terms(policy, data, self.tau)?;
        let total: KahanSum = u
            .iter()
            .map(|&v| self.alpha * v + self.beta * v * v)
            .collect();
        Ok(total.total() / self.n as f64 + self.constant)
    }

    /// Gradient of the surrogate's data term averaged over `batch`.
    pub fn gradient(
        &self,
        policy: &SoftmaxPolicy,
        data: &LoggedDataset,
        batch: &[usize],
    ) -> Result<Gradient> {
        Ok(self
            .batch_terms(policy, data, batch, true)?
            .1
            .expect("gradient requested"))
    }

    /// Batch-mean surrogate value (constant included) and optional gradient.
    pub(crate) fn batch_terms(
        &self,
        policy: &SoftmaxPolicy,
        data: &LoggedDataset,
        batch: &[usize],
        want_grad: bool,
    ) -> Result<(f64, Option<Gradient>)> {
        self.check(data)?;
        check_data(policy, data)?;
        if batch.is_empty() {
            return Err(CrmError::arg("empty batch"));
        }
        let cap = 1.0 / self.tau;
        let inv = 1.0 / batch.len() as f64;
        let mut grad = want_grad.then(|| Gradient::zeros_like(policy));
        let mut scratch = Scratch::new(policy.k());
        let mut total = KahanSum::new();
        for &i in batch {
            let r = &data.records()[i];
            policy.probs_into(&r.features, &mut scratch.probs);
            let ratio = scratch.probs[r.action] / r.propensity;
            let u = r.reward * ratio.min(cap);
            total.add(self.alpha * u + self.beta * u * u);
            if let Some(g) = grad.as_mut() {
                if r.reward != 0.0 && ratio < cap {
                    let df_du = self.alpha + 2.0 * self.beta * u;
                    scratch.prob_grad(r.action, df_du * r.reward / r.propensity);
                    g.add_logit_grad(&r.features, &scratch.dz, inv);
                }
            }
        }
        Ok((total.total() * inv + self.constant, grad))
    }
}
