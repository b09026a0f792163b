//! Exact solver for the weights-only logging-policy RERM problem
//! `min_W (1/n) Σ -ln π_W(a_i|x_i) + λ‖W‖²` with biases fixed at zero.
//!
//! Without biases the objective is 2λ-strongly convex, so a Newton iterate
//! with gradient norm `g` is within `g/(2λ)` of the unique minimizer.

use nalgebra::{DMatrix, DVector};

use crate::data::LoggedDataset;
use crate::error::{CrmError, Result};
use crate::numeric::{log_sum_exp, KahanSum};
use crate::policy::SoftmaxPolicy;

use super::objective::{check_data, Scratch};

#[derive(Debug, Clone, PartialEq)]
pub struct RermSolution {
    pub policy: SoftmaxPolicy,
    pub iterations: usize,
    pub grad_norm: f64,
    /// Upper bound on the distance to the exact minimizer.
    pub error_bound: f64,
}

fn check(data: &LoggedDataset, lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(CrmError::arg(format!(
            "logging-policy regularization must be positive, got {lambda}"
        )));
    }
    if data.is_empty() {
        return Err(CrmError::arg("no records"));
    }
    Ok(())
}

pub fn logging_nll_value(policy: &SoftmaxPolicy, data: &LoggedDataset, lambda: f64) -> Result<f64> {
    check_data(policy, data)?;
    let mut logits = vec![0.0; policy.k()];
    let total: KahanSum = data
        .records()
        .iter()
        .map(|r| {
            policy.logits_into(&r.features, &mut logits);
            log_sum_exp(&logits) - logits[r.action]
        })
        .collect();
    Ok(total.total() / data.len() as f64 + lambda * policy.weight_norm_sq())
}

/// Weight gradient of [`logging_nll_value`], row-major `k × d`.
pub fn logging_nll_gradient(
    policy: &SoftmaxPolicy,
    data: &LoggedDataset,
    lambda: f64,
) -> Result<Vec<f64>> {
    check_data(policy, data)?;
    let d = policy.d();
    let inv = 1.0 / data.len() as f64;
    let mut scratch = Scratch::new(policy.k());
    let mut g: Vec<f64> = policy.weights().iter().map(|w| 2.0 * lambda * w).collect();
    for r in data.records() {
        policy.probs_into(&r.features, &mut scratch.probs);
        scratch.log_prob_grad(r.action, -inv);
        for (a, &dz) in scratch.dz.iter().enumerate() {
            for (gw, x) in g[a * d..(a + 1) * d].iter_mut().zip(&r.features) {
                *gw += dz * x;
            }
        }
    }
    Ok(g)
}

fn hessian(policy: &SoftmaxPolicy, data: &LoggedDataset, lambda: f64) -> DMatrix<f64> {
    let (d, k) = (policy.d(), policy.k());
    let p = d * k;
    let inv = 1.0 / data.len() as f64;
    let mut h = DMatrix::<f64>::identity(p, p) * (2.0 * lambda);
    let mut probs = vec![0.0; k];
    for r in data.records() {
        policy.probs_into(&r.features, &mut probs);
        for a in 0..k {
            for b in 0..k {
                let c = if a == b {
                    probs[a] * (1.0 - probs[a])
                } else {
                    -probs[a] * probs[b]
                } * inv;
                if c == 0.0 {
                    continue;
                }
                for (j, xj) in r.features.iter().enumerate() {
                    for (l, xl) in r.features.iter().enumerate() {
                        h[(a * d + j, b * d + l)] += c * xj * xl;
                    }
                }
            }
        }
    }
    h
}

/// Damped Newton iterations until `‖∇‖/(2λ) ≤ tol` or `max_iter` is reached.
pub fn solve_rerm(
    data: &LoggedDataset,
    lambda: f64,
    tol: f64,
    max_iter: usize,
) -> Result<RermSolution> {
    check(data, lambda)?;
    let (d, k) = (data.d(), data.k());
    let mut policy = SoftmaxPolicy::zeros(d, k);
    let mut value = logging_nll_value(&policy, data, lambda)?;
    let mut iterations = 0;
    loop {
        let g = logging_nll_gradient(&policy, data, lambda)?;
        let grad_norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        let error_bound = grad_norm / (2.0 * lambda);
        if error_bound <= tol || iterations >= max_iter {
            return Ok(RermSolution {
                policy,
                iterations,
                grad_norm,
                error_bound,
            });
        }
        let h = hessian(&policy, data, lambda);
        let chol = h
            .cholesky()
            .ok_or_else(|| CrmError::domain("RERM Hessian is not positive definite"))?;
        let step = chol.solve(&DVector::from_vec(g.clone()));
        let slope: f64 = -step.iter().zip(&g).map(|(s, gi)| s * gi).sum::<f64>();
        let mut t = 1.0;
        loop {
            let mut trial = policy.clone();
            for (w, s) in trial.weights_mut().iter_mut().zip(step.iter()) {
                *w -= t * s;
            }
            let v = logging_nll_value(&trial, data, lambda)?;
            if v <= value + 1e-4 * t * slope || t < 1e-12 {
                policy = trial;
                value = v;
                break;
            }
            t *= 0.5;
        }
        iterations += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LogRecord;

    fn data(n: usize) -> LoggedDataset {
        let records = (0..n)
            .map(|i| {
                let t = i as f64;
                LogRecord {
                    features: vec![(t * 0.7).sin(), (t * 1.3).cos(), 0.5],
                    action: (i * 5 + i / 3) % 3,
                    propensity: 1.0,
                    reward: 0.0,
                }
            })
            .collect();
        LoggedDataset::new(records, 3, 3).unwrap()
    }

    #[test]
    fn converges_to_stationary_point() {
        let s = solve_rerm(&data(40), 0.01, 1e-10, 100).unwrap();
        assert!(s.error_bound <= 1e-10, "{s:?}");
        assert!(s.iterations < 30);
    }

    #[test]
    fn duplicated_records_same_solution() {
        let base = data(30);
        let doubled: Vec<LogRecord> = base
            .records()
            .iter()
            .flat_map(|r| [r.clone(), r.clone()])
            .collect();
        let doubled = LoggedDataset::new(doubled, 3, 3).unwrap();
        let a = solve_rerm(&base, 0.05, 1e-12, 100).unwrap().policy;
        let b = solve_rerm(&doubled, 0.05, 1e-12, 100).unwrap().policy;
        for (x, y) in a.weights().iter().zip(b.weights()) {
            assert!((x - y).abs() <= 1e-10);
        }
    }

    #[test]
    fn rejects_zero_lambda() {
        assert!(matches!(
            solve_rerm(&data(5), 0.0, 1e-10, 10),
            Err(CrmError::Argument(_))
        ));
    }
}
