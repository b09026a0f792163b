//! Softmax and mixed-logit policies.
//!
//! A [`SoftmaxPolicy`] holds one weight row per action (the block form of a
//! joint feature map `one_hot(a) ⊗ x`) plus one bias per action. Biases take
//! part in logits and sampling but never in norms, distances or penalties.
//!
//! A [`MixedLogitSpec`] puts an isotropic Gaussian over the weights of a mean
//! policy; its action probabilities are expectations of softmax probabilities
//! and have no closed form, so they are either estimated by Monte Carlo or
//! sandwiched between scaled softmax probabilities of the mean weights.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{CrmError, Result};
use crate::numeric::{self, KahanSum};

#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxPolicy {
    d: usize,
    k: usize,
    /// k × d, row-major: row `a` scores action `a`.
    weights: Vec<f64>,
    biases: Vec<f64>,
}

impl SoftmaxPolicy {
    /// The all-zero policy, i.e. the uniform action distribution.
    pub fn zeros(d: usize, k: usize) -> Self {
        Self {
            d,
            k,
            weights: vec![0.0; k * d],
            biases: vec![0.0; k],
        }
    }

    pub fn new(d: usize, k: usize, weights: Vec<f64>, biases: Vec<f64>) -> Result<Self> {
        if k == 0 {
            return Err(CrmError::arg("policy needs at least one action"));
        }
        if weights.len() != k * d {
            return Err(CrmError::dims(format!("{} weights", k * d), weights.len()));
        }
        if biases.len() != k {
            return Err(CrmError::dims(format!("{k} biases"), biases.len()));
        }
        if weights.iter().chain(&biases).any(|v| !v.is_finite()) {
            return Err(CrmError::domain("policy parameters must be finite"));
        }
        Ok(Self {
            d,
            k,
            weights,
            biases,
        })
    }

    /// Builds a policy from one weight row per action.
    pub fn from_rows(rows: &[Vec<f64>], biases: Vec<f64>) -> Result<Self> {
        let k = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(CrmError::dims(format!("rows of length {d}"), bad.len()));
        }
        Self::new(d, k, rows.concat(), biases)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [f64] {
        &mut self.biases
    }

    pub fn weight_row(&self, action: usize) -> &[f64] {
        &self.weights[action * self.d..(action + 1) * self.d]
    }

    /// Number of regularized (weight) parameters, `k * d`.
    pub fn weight_count(&self) -> usize {
        self.k * self.d
    }

    /// Squared Euclidean norm of the weights; biases excluded.
    pub fn weight_norm_sq(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum()
    }

    pub fn same_shape(&self, other: &SoftmaxPolicy) -> bool {
        self.d == other.d && self.k == other.k
    }

    fn check_context(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d {
            return Err(CrmError::dims(format!("{} features", self.d), x.len()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(CrmError::domain("context features must be finite"));
        }
        Ok(())
    }

    /// Writes `weights[a]·x + biases[a]` into `out` without validation.
    pub(crate) fn logits_into(&self, x: &[f64], out: &mut [f64]) {
        for (a, o) in out.iter_mut().enumerate() {
            *o = numeric::dot(self.weight_row(a), x) + self.biases[a];
        }
    }

    /// Writes the action distribution at `x` into `out` without validation.
    pub(crate) fn probs_into(&self, x: &[f64], out: &mut [f64]) {
        self.logits_into(x, out);
        let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for o in out.iter_mut() {
            *o = (*o - max).exp();
            total += *o;
        }
        for o in out.iter_mut() {
            *o /= total;
        }
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_context(x)?;
        let mut out = vec![0.0; self.k];
        self.logits_into(x, &mut out);
        Ok(out)
    }

    pub fn action_probs(&self, x: &[f64]) -> Result<ActionDistribution> {
        self.check_context(x)?;
        let mut probs = vec![0.0; self.k];
        self.probs_into(x, &mut probs);
        Ok(ActionDistribution { probs })
    }

    /// Gumbel-max sample: `argmax_a logit_a + g_a` with `g_a` standard Gumbel.
    pub fn sample_action<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Result<usize> {
        let logits = self.logits(x)?;
        Ok(gumbel_argmax(&logits, rng))
    }

    /// Index of the largest logit; ties go to the lowest index.
    pub fn argmax_action(&self, x: &[f64]) -> Result<usize> {
        let logits = self.logits(x)?;
        Ok(argmax(&logits))
    }

    /// Copy with every weight and bias multiplied by the inverse temperature `kappa`.
    pub fn tempered(&self, kappa: f64) -> SoftmaxPolicy {
        SoftmaxPolicy {
            d: self.d,
            k: self.k,
            weights: self.weights.iter().map(|w| w * kappa).collect(),
            biases: self.biases.iter().map(|b| b * kappa).collect(),
        }
    }
}

/// Lowest index of the maximum entry.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Standard Gumbel variate `-ln(-ln u)`, with `u` kept strictly inside (0, 1).
pub fn standard_gumbel<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // Largest double below one.
    const U_MAX: f64 = 1.0 - f64::EPSILON / 2.0;
    let u: f64 = rng.random::<f64>().clamp(f64::MIN_POSITIVE, U_MAX);
    -(-u.ln()).ln()
}

pub fn gumbel_argmax<R: Rng + ?Sized>(logits: &[f64], rng: &mut R) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (a, &z) in logits.iter().enumerate() {
        let score = z + standard_gumbel(rng);
        if score > best_score {
            best_score = score;
            best = a;
        }
    }
    best
}

/// Squared distance between two policies' weights. Biases are ignored.
pub fn param_distance_sq(a: &SoftmaxPolicy, b: &SoftmaxPolicy) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(CrmError::dims(
            format!("{}x{} policy", a.k, a.d),
            format!("{}x{} policy", b.k, b.d),
        ));
    }
    Ok(a.weights
        .iter()
        .zip(&b.weights)
        .map(|(x, y)| (x - y) * (x - y))
        .sum())
}

/// A point on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionDistribution {
    probs: Vec<f64>,
}

impl ActionDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(CrmError::domain(
                "probabilities must be finite and nonnegative",
            ));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(CrmError::domain(format!("probabilities sum to {total}")));
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, action: usize) -> f64 {
        self.probs[action]
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.probs
    }
}

/// Posterior `N(mean, σI)` over weights together with the prior `N(prior_mean, σ0 I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedLogitSpec {
    pub mean: SoftmaxPolicy,
    pub variance: f64,
    pub prior_mean: SoftmaxPolicy,
    pub prior_variance: f64,
}

impl MixedLogitSpec {
    pub fn new(
        mean: SoftmaxPolicy,
        variance: f64,
        prior_mean: SoftmaxPolicy,
        prior_variance: f64,
    ) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(CrmError::arg(format!(
                "posterior variance must be positive, got {variance}"
            )));
        }
        if !(prior_variance >= variance && prior_variance.is_finite()) {
            return Err(CrmError::arg(format!(
                "prior variance {prior_variance} must be at least the posterior variance {variance}"
            )));
        }
        if !mean.same_shape(&prior_mean) {
            return Err(CrmError::dims(
                format!("{}x{} prior", mean.k, mean.d),
                format!("{}x{} prior", prior_mean.k, prior_mean.d),
            ));
        }
        Ok(Self {
            mean,
            variance,
            prior_mean,
            prior_variance,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
}

/// Monte-Carlo estimate of the mixed-logit probability of `action` at `x`.
///
/// Each draw averages the softmax probability (not the argmax indicator) of a
/// sampled weight matrix. The Gaussian perturbation of row `a` only enters the
/// logits through `ε_a·x ~ N(0, σ‖x‖²)`, so one scalar normal per action is
/// drawn instead of a full `k × d` matrix.
pub fn mixed_logit_prob_mc<R: Rng + ?Sized>(
    spec: &MixedLogitSpec,
    x: &[f64],
    action: usize,
    samples: usize,
    rng: &mut R,
) -> Result<McEstimate> {
    if samples == 0 {
        return Err(CrmError::arg("need at least one Monte-Carlo sample"));
    }
    let policy = &spec.mean;
    if action >= policy.k {
        return Err(CrmError::arg(format!("action {action} out of range")));
    }
    let base = policy.logits(x)?;
    let scale = (spec.variance * numeric::dot(x, x)).sqrt();
    let mut logits = vec![0.0; policy.k];
    let mut probs = vec![0.0; policy.k];
    let mut sum = KahanSum::new();
    let mut sum_sq = KahanSum::new();
    for _ in 0..samples {
        for (l, b) in logits.iter_mut().zip(&base) {
            let z: f64 = StandardNormal.sample(rng);
            *l = b + scale * z;
        }
        numeric::softmax_into(&logits, &mut probs);
        let p = probs[action];
        sum.add(p);
        sum_sq.add(p * p);
    }
    let m = samples as f64;
    let estimate = sum.total() / m;
    let std_error = if samples > 1 {
        let var = ((sum_sq.total() - m * estimate * estimate) / (m - 1.0)).max(0.0);
        (var / m).sqrt()
    } else {
        0.0
    };
    Ok(McEstimate {
        estimate,
        std_error,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbBounds {
    pub lower: f64,
    pub upper: f64,
}

/// Sandwich for a mixed-logit probability given the mean-weight softmax
/// probability `p`, the posterior variance and the feature norm bound.
pub fn mean_prob_bounds(p: f64, variance: f64, norm_bound: f64) -> ProbBounds {
    let b2 = norm_bound * norm_bound;
    ProbBounds {
        lower: p * (-0.5 * variance * b2).exp(),
        upper: (p * (2.0 * variance * b2).exp()).min(1.0),
    }
}

pub fn mixed_logit_prob_bounds(
    spec: &MixedLogitSpec,
    x: &[f64],
    action: usize,
    norm_bound: f64,
) -> Result<ProbBounds> {
    let norm = numeric::norm(x);
    if norm > norm_bound {
        return Err(CrmError::arg(format!(
            "context norm {norm} exceeds the bound {norm_bound}"
        )));
    }
    if action >= spec.mean.k {
        return Err(CrmError::arg(format!("action {action} out of range")));
    }
    let p = spec.mean.action_probs(x)?.prob(action);
    Ok(mean_prob_bounds(p, spec.variance, norm_bound))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;
    use proptest::prelude::*;

    fn two_action(l0: f64, l1: f64) -> SoftmaxPolicy {
        // d = 1, x = 1 turns the weights into logits.
        SoftmaxPolicy::new(1, 2, vec![l0, l1], vec![0.0, 0.0]).unwrap()
    }

    #[test]
    fn uniform_policy_probs() {
        let p = SoftmaxPolicy::zeros(3, 5);
        let probs = p.action_probs(&[0.3, -1.0, 2.0]).unwrap();
        for &q in probs.probs() {
            assert!((q - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn two_action_probs_match_logistic() {
        // e / (e + 1)
        let expected = std::f64::consts::E / (std::f64::consts::E + 1.0);
        let probs = two_action(1.0, 0.0).action_probs(&[1.0]).unwrap();
        assert!((probs.prob(0) - 0.73106).abs() < 1e-5);
        assert!((probs.prob(0) - expected).abs() < 1e-15);
        assert!((probs.prob(1) - 0.26894).abs() < 1e-5);
    }

    #[test]
    fn huge_logits_do_not_overflow() {
        let probs = two_action(1000.0, 0.0).action_probs(&[1.0]).unwrap();
        assert_eq!(probs.prob(0), 1.0);
        assert!(probs.prob(1).is_finite() && probs.prob(1) >= 0.0);
    }

    #[test]
    fn non_finite_context_rejected() {
        let p = SoftmaxPolicy::zeros(2, 2);
        assert!(matches!(
            p.action_probs(&[f64::NAN, 0.0]),
            Err(CrmError::Domain(_))
        ));
        assert!(matches!(
            p.action_probs(&[1.0]),
            Err(CrmError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn argmax_cases() {
        let p = SoftmaxPolicy::new(1, 3, vec![0.0, 0.0, 1.0], vec![0.0; 3]).unwrap();
        assert_eq!(p.argmax_action(&[1.0]).unwrap(), 2);
        let p = SoftmaxPolicy::zeros(1, 3);
        assert_eq!(p.argmax_action(&[1.0]).unwrap(), 0);
        assert_eq!(two_action(-5.0, -1.0).argmax_action(&[1.0]).unwrap(), 1);
    }

    #[test]
    fn single_action_always_sampled() {
        let p = SoftmaxPolicy::new(2, 1, vec![0.5, -0.5], vec![3.0]).unwrap();
        let mut rng = rng_from(1);
        for _ in 0..100 {
            assert_eq!(p.sample_action(&[1.0, 2.0], &mut rng).unwrap(), 0);
        }
    }

    #[test]
    fn gumbel_sampling_frequencies() {
        let mut rng = rng_from(11);
        let draws = 100_000;
        let uniform = SoftmaxPolicy::zeros(1, 4);
        let mut counts = [0usize; 4];
        for _ in 0..draws {
            counts[uniform.sample_action(&[1.0], &mut rng).unwrap()] += 1;
        }
        for c in counts {
            assert!((c as f64 / draws as f64 - 0.25).abs() <= 0.006);
        }

        let peaked = two_action(1.0, 0.0);
        let target = peaked.action_probs(&[1.0]).unwrap().prob(0);
        let hits = (0..draws)
            .filter(|_| peaked.sample_action(&[1.0], &mut rng).unwrap() == 0)
            .count();
        assert!((hits as f64 / draws as f64 - 0.731).abs() <= 0.006);
        assert!((hits as f64 / draws as f64 - target).abs() <= 0.006);
    }

    #[test]
    fn gumbel_variates_are_finite_at_the_edges() {
        struct Fixed(u64);
        impl rand::RngCore for Fixed {
            fn next_u32(&mut self) -> u32 {
                self.0 as u32
            }
            fn next_u64(&mut self) -> u64 {
                self.0
            }
            fn fill_bytes(&mut self, dst: &mut [u8]) {
                dst.fill(self.0 as u8)
            }
        }
        assert!(standard_gumbel(&mut Fixed(0)).is_finite());
        assert!(standard_gumbel(&mut Fixed(u64::MAX)).is_finite());
    }

    #[test]
    fn distance_excludes_biases() {
        let a = SoftmaxPolicy::new(2, 2, vec![1.0, 1.0, 1.0, 1.0], vec![5.0, -3.0]).unwrap();
        let b = SoftmaxPolicy::new(2, 2, vec![0.0; 4], vec![0.0, 9.0]).unwrap();
        assert_eq!(param_distance_sq(&a, &b).unwrap(), 4.0);
        assert_eq!(param_distance_sq(&a, &a).unwrap(), 0.0);
        let c = SoftmaxPolicy::new(2, 1, vec![2.0, 0.0], vec![0.0]).unwrap();
        let e = SoftmaxPolicy::new(2, 1, vec![0.0, 1.0], vec![0.0]).unwrap();
        assert_eq!(param_distance_sq(&c, &e).unwrap(), 5.0);
        assert!(param_distance_sq(&a, &c).is_err());
    }

    #[test]
    fn mc_collapses_to_softmax_for_tiny_variance() {
        let mean = SoftmaxPolicy::new(
            2,
            3,
            vec![0.5, -0.2, 1.0, 0.3, -1.0, 0.0],
            vec![0.1, 0.0, -0.1],
        )
        .unwrap();
        let spec = MixedLogitSpec::new(mean.clone(), 1e-12, mean.clone(), 1.0).unwrap();
        let x = [0.7, -0.4];
        let mut rng = rng_from(5);
        let est = mixed_logit_prob_mc(&spec, &x, 1, 1000, &mut rng).unwrap();
        let p = mean.action_probs(&x).unwrap().prob(1);
        assert!((est.estimate - p).abs() < 1e-6);
    }

    #[test]
    fn mc_symmetric_case_is_one_half() {
        let mean = SoftmaxPolicy::zeros(1, 2);
        let spec = MixedLogitSpec::new(mean.clone(), 1.0, mean, 1.0).unwrap();
        let mut rng = rng_from(9);
        let est = mixed_logit_prob_mc(&spec, &[1.0], 0, 20_000, &mut rng).unwrap();
        assert!((est.estimate - 0.5).abs() <= 3.0 * est.std_error);
        assert!((0.0..=1.0).contains(&est.estimate));
    }

    #[test]
    fn bounds_formula_values() {
        let b = mean_prob_bounds(0.5, 0.0, 3.0);
        assert_eq!((b.lower, b.upper), (0.5, 0.5));
        let b = mean_prob_bounds(0.5, 0.02, 1.0);
        assert!((b.lower - 0.5 * (-0.01f64).exp()).abs() < 1e-15);
        assert!((b.lower - 0.49502).abs() < 1e-5);
        assert!((b.upper - 0.52041).abs() < 1e-5);
        assert_eq!(mean_prob_bounds(0.9, 1.0, 2.0).upper, 1.0);
    }

    #[test]
    fn bounds_reject_context_outside_norm_ball() {
        let mean = SoftmaxPolicy::zeros(2, 2);
        let spec = MixedLogitSpec::new(mean.clone(), 0.1, mean, 1.0).unwrap();
        assert!(mixed_logit_prob_bounds(&spec, &[3.0, 4.0], 0, 4.9).is_err());
        assert!(mixed_logit_prob_bounds(&spec, &[3.0, 4.0], 0, 5.0).is_ok());
    }

    #[test]
    fn spec_rejects_variance_above_prior() {
        let mean = SoftmaxPolicy::zeros(2, 2);
        assert!(MixedLogitSpec::new(mean.clone(), 2.0, mean.clone(), 1.0).is_err());
        assert!(MixedLogitSpec::new(mean.clone(), 0.0, mean, 1.0).is_err());
    }

    #[test]
    fn tempering() {
        let p = SoftmaxPolicy::new(1, 2, vec![2.0, -2.0], vec![1.0, 0.0]).unwrap();
        assert_eq!(p.tempered(0.5).weights(), &[1.0, -1.0]);
        assert_eq!(p.tempered(1.0), p);
        let zero = p.tempered(0.0);
        assert!(zero
            .weights()
            .iter()
            .chain(zero.biases())
            .all(|v| *v == 0.0));
    }

    fn arb_policy(d: usize, k: usize) -> impl Strategy<Value = SoftmaxPolicy> {
        (
            prop::collection::vec(-5.0..5.0f64, k * d),
            prop::collection::vec(-5.0..5.0f64, k),
        )
            .prop_map(move |(w, b)| SoftmaxPolicy::new(d, k, w, b).unwrap())
    }

    proptest! {
        #[test]
        fn probs_on_simplex(p in arb_policy(3, 4), x in prop::collection::vec(-3.0..3.0f64, 3)) {
            let probs = p.action_probs(&x).unwrap();
            let total: f64 = probs.probs().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            prop_assert!(probs.probs().iter().all(|&q| q > 0.0));
        }

        #[test]
        fn argmax_invariant_under_positive_tempering(
            p in arb_policy(3, 4),
            x in prop::collection::vec(-3.0..3.0f64, 3),
            kappa in 0.01..10.0f64,
        ) {
            prop_assert_eq!(p.argmax_action(&x).unwrap(), p.tempered(kappa).argmax_action(&x).unwrap());
        }

        #[test]
        fn bounds_tighten_with_smaller_variance(
            p in 0.0..1.0f64, s1 in 0.0..1.0f64, s2 in 0.0..1.0f64, b in 0.0..3.0f64,
        ) {
            let (lo, hi) = if s1 < s2 { (s1, s2) } else { (s2, s1) };
            let tight = mean_prob_bounds(p, lo, b);
            let loose = mean_prob_bounds(p, hi, b);
            prop_assert!(tight.lower >= loose.lower);
            prop_assert!(tight.upper <= loose.upper);
            prop_assert!(tight.lower <= p && p <= tight.upper);
        }
    }
}
