//! Synthetic classification tasks for simulation studies.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{LabeledDataset, LabeledExample, LoggedDataset};
use crate::error::{CrmError, Result};
use crate::policy::SoftmaxPolicy;
use crate::seed;
use crate::simulate::simulate_logs;

/// A finite context space with one rewarded action per context, drawn
/// uniformly. Expected rewards can be computed exactly by enumeration.
#[derive(Debug, Clone, PartialEq)]
pub struct EnumerableTask {
    pub contexts: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub k: usize,
}

impl EnumerableTask {
    /// Five contexts in the unit disc (plus a constant feature), three actions.
    pub fn five_by_three() -> Self {
        let contexts = vec![
            vec![0.6, 0.0, 0.5],
            vec![0.0, 0.6, 0.5],
            vec![-0.6, 0.0, 0.5],
            vec![0.0, -0.6, 0.5],
            vec![0.3, 0.3, 0.5],
        ];
        Self {
            contexts,
            labels: vec![0, 1, 2, 2, 1],
            k: 3,
        }
    }

    pub fn d(&self) -> usize {
        self.contexts[0].len()
    }

    /// A fixed, moderately informative logging policy.
    pub fn logging_policy(&self) -> SoftmaxPolicy {
        SoftmaxPolicy::new(
            3,
            3,
            vec![1.5, 0.0, 0.0, 0.0, 1.5, 0.0, -1.0, -1.0, 0.0],
            vec![0.0; 3],
        )
        .expect("valid shape")
    }

    /// Exact expected reward of `policy` under the uniform context distribution.
    pub fn expected_reward(&self, policy: &SoftmaxPolicy) -> Result<f64> {
        let mut total = 0.0;
        for (x, &y) in self.contexts.iter().zip(&self.labels) {
            total += policy.action_probs(x)?.prob(y);
        }
        Ok(total / self.contexts.len() as f64)
    }

    pub fn exact_risk(&self, policy: &SoftmaxPolicy) -> Result<f64> {
        Ok(1.0 - self.expected_reward(policy)?)
    }

    /// `n` contexts drawn uniformly with replacement.
    pub fn sample_contexts(&self, n: usize, seed: u64) -> Result<LabeledDataset> {
        let mut rng = seed::rng_from(seed::derive(seed, "contexts"));
        let examples = (0..n)
            .map(|_| {
                let c = rng.random_range(0..self.contexts.len());
                LabeledExample {
                    features: self.contexts[c].clone(),
                    label: self.labels[c],
                }
            })
            .collect();
        LabeledDataset::new(examples, self.d(), self.k)
    }

    pub fn sample_logs(
        &self,
        logging: &SoftmaxPolicy,
        n: usize,
        seed: u64,
    ) -> Result<LoggedDataset> {
        let contexts = self.sample_contexts(n, seed)?;
        simulate_logs(logging, &contexts, seed::derive(seed, "actions"))
    }
}

/// Gaussian class clusters: `x = μ_y + noise·z` with `z ~ N(0, I/d)` and
/// class means `μ_c ~ N(0, separation²·I/d)` fixed by the task seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterTask {
    pub means: Vec<Vec<f64>>,
    pub noise: f64,
}

impl ClusterTask {
    pub fn new(d: usize, k: usize, separation: f64, noise: f64, seed: u64) -> Result<Self> {
        if d == 0 || k < 2 {
            return Err(CrmError::arg(format!(
                "need d >= 1 and k >= 2, got d={d}, k={k}"
            )));
        }
        if !(separation >= 0.0 && noise >= 0.0) {
            return Err(CrmError::arg("separation and noise must be nonnegative"));
        }
        let mut rng = seed::rng_from(seed::derive(seed, "cluster-means"));
        let scale = separation / (d as f64).sqrt();
        let means = (0..k)
            .map(|_| {
                (0..d)
                    .map(|_| {
                        scale * {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            z
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(Self { means, noise })
    }

    pub fn d(&self) -> usize {
        self.means[0].len()
    }

    pub fn k(&self) -> usize {
        self.means.len()
    }

    /// `n` examples with labels cycling through the classes, so every class
    /// appears `⌊n/k⌋` or `⌈n/k⌉` times.
    pub fn sample(&self, n: usize, seed: u64) -> Result<LabeledDataset> {
        let mut rng = seed::rng_from(seed::derive(seed, "cluster-sample"));
        let (d, k) = (self.d(), self.k());
        let scale = self.noise / (d as f64).sqrt();
        let examples = (0..n)
            .map(|i| {
                let label = i % k;
                let features = self.means[label]
                    .iter()
                    .map(|m| {
                        m + scale * {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            z
                        }
                    })
                    .collect();
                LabeledExample { features, label }
            })
            .collect();
        LabeledDataset::new(examples, d, k)
    }
}
