//! Bernoulli restricted Boltzmann machine with persistent contrastive
//! divergence.
//!
//! Energy is `E(v, h) = -h^T W v - b^T v - c^T h` with `W` of shape
//! `n_hidden x n_visible`. Parameters are stored flat as `[W (row-major), b, c]`,
//! the same order in which gradients are produced.
//!
//! The per-example log-likelihood gradient is `positive(x) - N`, where
//! `N` is the model statistic estimated from persistent Gibbs chains. `N`
//! never looks at the batch, so one record only ever changes its own
//! gradient, which is what per-example clipping needs.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::BinaryRecord;
use crate::dpsgd::GradientModel;
use crate::{Error, Result};

pub const DEFAULT_HIDDEN: usize = 200;
pub const DEFAULT_WEIGHT_STD: f64 = 0.01;
pub const DEFAULT_BURN_IN: usize = 500;

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Model parameters `(W, b, c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RbmModel {
    n_visible: usize,
    n_hidden: usize,
    params: Vec<f64>,
}

/// JSON layout of an [`RbmModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbmParameters {
    pub n_visible: usize,
    pub n_hidden: usize,
    /// `n_hidden x n_visible`, row-major.
    #[serde(rename = "W")]
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

impl RbmModel {
    pub fn zeros(n_visible: usize, n_hidden: usize) -> Self {
        Self {
            n_visible,
            n_hidden,
            params: vec![0.0; n_hidden * n_visible + n_visible + n_hidden],
        }
    }

    /// Weights from `N(0, weight_std^2)`, zero biases.
    pub fn random<R: Rng + ?Sized>(n_visible: usize, n_hidden: usize, weight_std: f64, rng: &mut R) -> Self {
        let mut model = Self::zeros(n_visible, n_hidden);
        let normal = Normal::new(0.0, weight_std).expect("valid normal");
        for w in &mut model.params[..n_hidden * n_visible] {
            *w = normal.sample(rng);
        }
        model
    }

    pub fn from_parameters(p: RbmParameters) -> Result<Self> {
        if p.w.len() != p.n_hidden * p.n_visible || p.b.len() != p.n_visible || p.c.len() != p.n_hidden {
            return Err(Error::Validation("RBM parameter shapes are inconsistent".into()));
        }
        let mut params = p.w;
        params.extend(p.b);
        params.extend(p.c);
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("RBM parameters must be finite".into()));
        }
        Ok(Self {
            n_visible: p.n_visible,
            n_hidden: p.n_hidden,
            params,
        })
    }

    pub fn to_parameters(&self) -> RbmParameters {
        RbmParameters {
            n_visible: self.n_visible,
            n_hidden: self.n_hidden,
            w: self.weights().to_vec(),
            b: self.visible_bias().to_vec(),
            c: self.hidden_bias().to_vec(),
        }
    }

    pub fn n_visible(&self) -> usize {
        self.n_visible
    }

    pub fn n_hidden(&self) -> usize {
        self.n_hidden
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn weights(&self) -> &[f64] {
        &self.params[..self.n_hidden * self.n_visible]
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        let end = self.n_hidden * self.n_visible;
        &mut self.params[..end]
    }

    pub fn visible_bias(&self) -> &[f64] {
        let start = self.n_hidden * self.n_visible;
        &self.params[start..start + self.n_visible]
    }

    pub fn visible_bias_mut(&mut self) -> &mut [f64] {
        let start = self.n_hidden * self.n_visible;
        &mut self.params[start..start + self.n_visible]
    }

    pub fn hidden_bias(&self) -> &[f64] {
        &self.params[self.n_hidden * self.n_visible + self.n_visible..]
    }

    pub fn hidden_bias_mut(&mut self) -> &mut [f64] {
        let start = self.n_hidden * self.n_visible + self.n_visible;
        &mut self.params[start..]
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.params[i * self.n_visible..(i + 1) * self.n_visible]
    }

    pub fn energy(&self, v: &[f64], h: &[f64]) -> Result<f64> {
        if v.len() != self.n_visible || h.len() != self.n_hidden {
            return Err(Error::Domain("state dimensions do not match the model".into()));
        }
        let mut e = 0.0;
        for (i, &hi) in h.iter().enumerate() {
            if hi != 0.0 {
                e -= hi * dot(self.row(i), v);
            }
        }
        e -= dot(self.visible_bias(), v);
        e -= dot(self.hidden_bias(), h);
        Ok(e)
    }

    /// `p(h_i = 1 | v) = logistic(c_i + sum_j w_ij v_j)`.
    pub fn conditional_hidden(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.n_visible);
        self.hidden_bias()
            .iter()
            .enumerate()
            .map(|(i, &c)| logistic(c + dot(self.row(i), v)))
            .collect()
    }

    /// `p(v_j = 1 | h) = logistic(b_j + sum_i w_ij h_i)`.
    pub fn conditional_visible(&self, h: &[f64]) -> Vec<f64> {
        debug_assert_eq!(h.len(), self.n_hidden);
        let mut act = self.visible_bias().to_vec();
        for (i, &hi) in h.iter().enumerate() {
            if hi != 0.0 {
                for (a, w) in act.iter_mut().zip(self.row(i)) {
                    *a += hi * w;
                }
            }
        }
        act.into_iter().map(logistic).collect()
    }

    /// `F(v) = -b^T v - sum_i ln(1 + exp(c_i + W_i v))`, so `p(v) ∝ exp(-F(v))`.
    pub fn free_energy(&self, v: &[f64]) -> f64 {
        let mut f = -dot(self.visible_bias(), v);
        for (i, &c) in self.hidden_bias().iter().enumerate() {
            let a = c + dot(self.row(i), v);
            f -= softplus(a);
        }
        f
    }

    /// `(p(h|x) x^T, x, p(h|x))`, flattened in parameter order.
    pub fn positive_statistic(&self, x: &[f64]) -> Vec<f64> {
        let ph = self.conditional_hidden(x);
        let mut out = Vec::with_capacity(self.num_params());
        for &p in &ph {
            out.extend(x.iter().map(|xj| p * xj));
        }
        out.extend_from_slice(x);
        out.extend_from_slice(&ph);
        out
    }

    /// One full Gibbs sweep `v -> h -> v` in place, sampling both layers.
    pub fn gibbs_sweep<R: Rng + ?Sized>(&self, v: &mut [f64], rng: &mut R) {
        let h: Vec<f64> = self
            .conditional_hidden(v)
            .into_iter()
            .map(|p| bernoulli(p, rng))
            .collect();
        for (vj, p) in v.iter_mut().zip(self.conditional_visible(&h)) {
            *vj = bernoulli(p, rng);
        }
    }

    /// Draws one visible vector: start from fair coins, then `gibbs_steps` sweeps.
    pub fn sample<R: Rng + ?Sized>(&self, gibbs_steps: usize, rng: &mut R) -> Result<BinaryRecord> {
        if gibbs_steps == 0 {
            return Err(Error::Domain("gibbs_steps must be at least 1".into()));
        }
        let mut v: Vec<f64> = (0..self.n_visible).map(|_| bernoulli(0.5, rng)).collect();
        for _ in 0..gibbs_steps {
            self.gibbs_sweep(&mut v, rng);
        }
        BinaryRecord::possibly_empty(v.into_iter().map(|x| x as u8).collect())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn softplus(a: f64) -> f64 {
    if a > 0.0 {
        a + (-a).exp().ln_1p()
    } else {
        a.exp().ln_1p()
    }
}

fn bernoulli<R: Rng + ?Sized>(p: f64, rng: &mut R) -> f64 {
    if rng.random::<f64>() < p {
        1.0
    } else {
        0.0
    }
}

/// Persistent Gibbs chains used to estimate the model statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct PersistentChains {
    states: Vec<Vec<f64>>,
}

impl PersistentChains {
    /// `count` chains started from fair coin flips.
    pub fn new<R: Rng + ?Sized>(count: usize, n_visible: usize, rng: &mut R) -> Result<Self> {
        if count == 0 {
            return Err(Error::Domain("at least one chain is required".into()));
        }
        Ok(Self {
            states: (0..count)
                .map(|_| (0..n_visible).map(|_| bernoulli(0.5, rng)).collect())
                .collect(),
        })
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn advance<R: Rng + ?Sized>(&mut self, model: &RbmModel, sweeps: usize, rng: &mut R) {
        for state in &mut self.states {
            for _ in 0..sweeps {
                model.gibbs_sweep(state, rng);
            }
        }
    }

    /// Mean of the positive statistic over the chain states.
    pub fn negative_statistic(&self, model: &RbmModel) -> Vec<f64> {
        let mut acc = vec![0.0; model.num_params()];
        for state in &self.states {
            for (a, s) in acc.iter_mut().zip(model.positive_statistic(state)) {
                *a += s;
            }
        }
        let n = self.states.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }
}

/// Log-likelihood ascent directions `positive(x_i) - N`, one per record.
///
/// The chains advance `gibbs_steps` sweeps under the current parameters
/// first. An empty batch returns no gradients and leaves the chains alone.
pub fn pcd_per_example_gradients<R: Rng + ?Sized>(
    model: &RbmModel,
    batch: &[&BinaryRecord],
    chains: &mut PersistentChains,
    gibbs_steps: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if gibbs_steps == 0 {
        return Err(Error::Domain("gibbs_steps must be at least 1".into()));
    }
    if chains.is_empty() {
        return Err(Error::Domain("at least one chain is required".into()));
    }
    if batch.is_empty() {
        return Ok(Vec::new());
    }
    if let Some(r) = batch.iter().find(|r| r.dim() != model.n_visible) {
        return Err(Error::Domain(format!(
            "record dimension {} does not match the model's {}",
            r.dim(),
            model.n_visible
        )));
    }
    chains.advance(model, gibbs_steps, rng);
    let negative = chains.negative_statistic(model);
    Ok(batch
        .par_iter()
        .map(|r| {
            let mut g = model.positive_statistic(&r.to_f64());
            for (gi, ni) in g.iter_mut().zip(&negative) {
                *gi -= ni;
            }
            g
        })
        .collect())
}

/// An RBM with its chains, exposed to DP-SGD as a loss (negative
/// log-likelihood) gradient model.
#[derive(Debug, Clone)]
pub struct PcdTrainer<R> {
    pub model: RbmModel,
    pub chains: PersistentChains,
    pub gibbs_steps: usize,
    rng: R,
}

impl<R: Rng> PcdTrainer<R> {
    pub fn new(model: RbmModel, chain_count: usize, gibbs_steps: usize, mut rng: R) -> Result<Self> {
        let chains = PersistentChains::new(chain_count, model.n_visible(), &mut rng)?;
        Ok(Self {
            model,
            chains,
            gibbs_steps,
            rng,
        })
    }
}

impl<R: Rng> GradientModel for PcdTrainer<R> {
    fn parameters(&self) -> &[f64] {
        self.model.params()
    }

    fn parameters_mut(&mut self) -> &mut [f64] {
        self.model.params_mut()
    }

    fn per_example_gradients(&mut self, batch: &[&BinaryRecord]) -> Result<Vec<Vec<f64>>> {
        let mut grads =
            pcd_per_example_gradients(&self.model, batch, &mut self.chains, self.gibbs_steps, &mut self.rng)?;
        for g in &mut grads {
            g.iter_mut().for_each(|x| *x = -*x);
        }
        Ok(grads)
    }
}

/// Exact quantities by enumeration, for small models only.
pub mod exact {
    use super::RbmModel;
    use crate::{Error, Result};

    const MAX_BITS: usize = 20;

    fn states(bits: usize) -> impl Iterator<Item = Vec<f64>> {
        (0..1usize << bits).map(move |s| (0..bits).map(|i| ((s >> i) & 1) as f64).collect())
    }

    fn log_sum_exp(xs: impl Iterator<Item = f64>) -> f64 {
        let xs: Vec<f64> = xs.collect();
        let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
    }

    fn check(bits: usize) -> Result<()> {
        if bits > MAX_BITS {
            return Err(Error::Domain(format!("{bits} units is too many to enumerate")));
        }
        Ok(())
    }

    /// `ln Z` summing `exp(-E(v, h))` over every joint state.
    pub fn log_partition_joint(model: &RbmModel) -> Result<f64> {
        check(model.n_visible() + model.n_hidden())?;
        let hs: Vec<Vec<f64>> = states(model.n_hidden()).collect();
        let mut terms = Vec::new();
        for v in states(model.n_visible()) {
            for h in &hs {
                terms.push(-model.energy(&v, h)?);
            }
        }
        Ok(log_sum_exp(terms.into_iter()))
    }

    /// `ln Z` summing `exp(-F(v))` over visible states.
    pub fn log_partition(model: &RbmModel) -> Result<f64> {
        check(model.n_visible())?;
        Ok(log_sum_exp(states(model.n_visible()).map(|v| -model.free_energy(&v))))
    }

    pub fn log_likelihood(model: &RbmModel, x: &[f64]) -> Result<f64> {
        Ok(-model.free_energy(x) - log_partition(model)?)
    }

    /// Model expectation of the positive statistic.
    pub fn negative_statistic(model: &RbmModel) -> Result<Vec<f64>> {
        let log_z = log_partition(model)?;
        let mut acc = vec![0.0; model.num_params()];
        for v in states(model.n_visible()) {
            let p = (-model.free_energy(&v) - log_z).exp();
            for (a, s) in acc.iter_mut().zip(model.positive_statistic(&v)) {
                *a += p * s;
            }
        }
        Ok(acc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn states(bits: usize) -> Vec<Vec<f64>> {
        (0..1usize << bits)
            .map(|s| (0..bits).map(|i| ((s >> i) & 1) as f64).collect())
            .collect()
    }

    fn random_model(m: usize, n: usize, scale: f64, rng: &mut ChaCha8Rng) -> RbmModel {
        let mut model = RbmModel::zeros(m, n);
        for p in model.params_mut() {
            *p = rng.random_range(-scale..scale);
        }
        model
    }

    #[test]
    fn energy_examples() {
        let mut model = RbmModel::zeros(3, 2);
        for p in model.params_mut() {
            *p = 0.7;
        }
        assert_eq!(model.energy(&[0.0; 3], &[0.0; 2]).unwrap(), 0.0);

        let mut model = RbmModel::zeros(3, 2);
        model.visible_bias_mut().fill(1.0);
        assert_eq!(model.energy(&[0.0, 1.0, 0.0], &[0.0, 0.0]).unwrap(), -1.0);

        let model = RbmModel::from_parameters(RbmParameters {
            n_visible: 2,
            n_hidden: 1,
            w: vec![1.0, 2.0],
            b: vec![0.0, 0.0],
            c: vec![0.0],
        })
        .unwrap();
        assert_eq!(model.energy(&[1.0, 1.0], &[1.0]).unwrap(), -3.0);
        assert!(model.energy(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn conditionals_at_zero_and_saturation() {
        let mut model = RbmModel::zeros(4, 3);
        assert!(model.conditional_hidden(&[1.0, 0.0, 1.0, 1.0]).iter().all(|&p| p == 0.5));
        assert!(model.conditional_visible(&[1.0, 0.0, 1.0]).iter().all(|&p| p == 0.5));
        model.hidden_bias_mut()[1] = 30.0;
        assert!(model.conditional_hidden(&[0.0; 4])[1] >= 1.0 - 1e-9);
    }

    #[test]
    fn conditionals_match_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = random_model(2, 1, 1.5, &mut rng);
        for v in states(2) {
            // p(h=1 | v) from the joint
            let num = (-model.energy(&v, &[1.0]).unwrap()).exp();
            let den = num + (-model.energy(&v, &[0.0]).unwrap()).exp();
            assert!((model.conditional_hidden(&v)[0] - num / den).abs() < 1e-12);
        }
        for h in states(1) {
            let joint: Vec<f64> = states(2).iter().map(|v| (-model.energy(v, &h).unwrap()).exp()).collect();
            let total: f64 = joint.iter().sum();
            let p_v0: f64 = states(2).iter().zip(&joint).filter(|(v, _)| v[0] == 1.0).map(|(_, p)| p).sum::<f64>() / total;
            assert!((model.conditional_visible(&h)[0] - p_v0).abs() < 1e-12);
        }
    }

    #[test]
    fn positive_statistic_at_zero_parameters() {
        let model = RbmModel::zeros(3, 2);
        let x = [1.0, 0.0, 1.0];
        let s = model.positive_statistic(&x);
        assert_eq!(&s[..6], &[0.5, 0.0, 0.5, 0.5, 0.0, 0.5]);
        assert_eq!(&s[6..9], &x);
        assert_eq!(&s[9..], &[0.5, 0.5]);
    }

    #[test]
    fn identical_records_get_identical_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = random_model(5, 3, 0.5, &mut rng);
        let x = BinaryRecord::from_items(5, &[0, 3]).unwrap();
        let batch = vec![&x, &x, &x];
        let mut chains = PersistentChains::new(4, 5, &mut rng).unwrap();
        let g = pcd_per_example_gradients(&model, &batch, &mut chains, 1, &mut rng).unwrap();
        assert_eq!(g[0], g[1]);
        assert_eq!(g[1], g[2]);
    }

    #[test]
    fn empty_batch_leaves_chains() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = random_model(4, 2, 0.5, &mut rng);
        let mut chains = PersistentChains::new(3, 4, &mut rng).unwrap();
        let before = chains.clone();
        assert!(pcd_per_example_gradients(&model, &[], &mut chains, 1, &mut rng).unwrap().is_empty());
        assert_eq!(chains, before);
    }

    #[test]
    fn negative_statistic_ignores_batch_contents() {
        let model = random_model(4, 2, 0.5, &mut ChaCha8Rng::seed_from_u64(4));
        let a = BinaryRecord::from_items(4, &[0]).unwrap();
        let b = BinaryRecord::from_items(4, &[1, 2, 3]).unwrap();
        let run = |batch: Vec<&BinaryRecord>| {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let mut chains = PersistentChains::new(6, 4, &mut rng).unwrap();
            pcd_per_example_gradients(&model, &batch, &mut chains, 2, &mut rng).unwrap();
            chains.negative_statistic(&model)
        };
        assert_eq!(run(vec![&a]), run(vec![&b, &b]));
    }

    #[test]
    fn sampling_fair_coins_and_saturation() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let model = RbmModel::zeros(3, 2);
        let n = 10_000;
        let mut ones = [0usize; 3];
        for _ in 0..n {
            for i in model.sample(1, &mut rng).unwrap().items() {
                ones[i] += 1;
            }
        }
        for c in ones {
            assert!((c as f64 / n as f64 - 0.5).abs() < 0.02);
        }
        let mut model = RbmModel::zeros(3, 2);
        model.visible_bias_mut()[1] = 30.0;
        assert!((0..500).all(|_| model.sample(2, &mut rng).unwrap().bits()[1] == 1));
        assert!(model.sample(0, &mut rng).is_err());
    }

    #[test]
    fn parameter_round_trip_and_validation() {
        let model = random_model(3, 2, 1.0, &mut ChaCha8Rng::seed_from_u64(7));
        assert_eq!(RbmModel::from_parameters(model.to_parameters()).unwrap(), model);
        let mut bad = model.to_parameters();
        bad.c.push(0.0);
        assert!(RbmModel::from_parameters(bad).is_err());
    }

    #[test]
    fn joint_probabilities_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for (m, n) in [(2, 1), (4, 3), (6, 6), (7, 5)] {
            let model = random_model(m, n, 1.0, &mut rng);
            let log_z = exact::log_partition_joint(&model).unwrap();
            let mut total = 0.0;
            for v in states(m) {
                for h in states(n) {
                    total += (-model.energy(&v, &h).unwrap() - log_z).exp();
                }
            }
            assert!((total - 1.0).abs() < 1e-10, "{total}");
            let via_free = exact::log_partition(&model).unwrap();
            assert!((log_z - via_free).abs() < 1e-10);
        }
    }

    #[test]
    fn exact_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-5;
        for _ in 0..5 {
            let model = random_model(3, 2, 1.0, &mut rng);
            let data: Vec<Vec<f64>> = vec![vec![1.0, 0.0, 1.0], vec![0.0, 1.0, 1.0], vec![1.0, 1.0, 0.0]];
            let negative = exact::negative_statistic(&model).unwrap();
            let mut analytic = vec![0.0; model.num_params()];
            for x in &data {
                for ((a, p), n) in analytic.iter_mut().zip(model.positive_statistic(x)).zip(&negative) {
                    *a += (p - n) / data.len() as f64;
                }
            }
            let mean_ll = |m: &RbmModel| {
                data.iter().map(|x| exact::log_likelihood(m, x).unwrap()).sum::<f64>() / data.len() as f64
            };
            for k in 0..model.num_params() {
                let mut plus = model.clone();
                plus.params_mut()[k] += h;
                let mut minus = model.clone();
                minus.params_mut()[k] -= h;
                let fd = (mean_ll(&plus) - mean_ll(&minus)) / (2.0 * h);
                assert!((fd - analytic[k]).abs() < 1e-5, "param {k}: {fd} vs {}", analytic[k]);
            }
        }
    }

    #[test]
    fn many_chains_approach_exact_negative_statistic() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let model = random_model(4, 3, 0.8, &mut rng);
        let exact = exact::negative_statistic(&model).unwrap();
        let mut chains = PersistentChains::new(20_000, 4, &mut rng).unwrap();
        chains.advance(&model, 30, &mut rng);
        let est = chains.negative_statistic(&model);
        for (a, b) in est.iter().zip(&exact) {
            assert!((a - b).abs() < 0.03, "{a} vs {b}");
        }
    }

    #[test]
    fn pcd_training_recovers_two_mode_marginals() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let m = 12;
        let modes = [
            [0.75, 0.75, 0.75, 0.75, 0.75, 0.75, 0.2, 0.2, 0.2, 0.2, 0.2, 0.2],
            [0.2, 0.2, 0.2, 0.2, 0.2, 0.2, 0.7, 0.7, 0.7, 0.7, 0.7, 0.7],
        ];
        let data: Vec<BinaryRecord> = (0..2000)
            .map(|i| {
                let p = &modes[i % 2];
                BinaryRecord::possibly_empty(p.iter().map(|&pj| (rng.random::<f64>() < pj) as u8).collect()).unwrap()
            })
            .collect();
        let mut marg = vec![0.0; m];
        for r in &data {
            for j in r.items() {
                marg[j] += 1.0 / data.len() as f64;
            }
        }
        let mut model = RbmModel::random(m, 8, 0.01, &mut rng);
        let mut chains = PersistentChains::new(100, m, &mut rng).unwrap();
        let eta = 0.02;
        for _ in 0..3000 {
            let batch: Vec<&BinaryRecord> = (0..50).map(|_| &data[rng.random_range(0..data.len())]).collect();
            let g = pcd_per_example_gradients(&model, &batch, &mut chains, 1, &mut rng).unwrap();
            for gi in &g {
                for (p, x) in model.params_mut().iter_mut().zip(gi) {
                    *p += eta * x / batch.len() as f64;
                }
            }
        }
        let log_z = exact::log_partition(&model).unwrap();
        let mut exact_marg = vec![0.0; m];
        for v in states(m) {
            let p = (-model.free_energy(&v) - log_z).exp();
            for j in 0..m {
                exact_marg[j] += p * v[j];
            }
        }
        for (a, b) in exact_marg.iter().zip(&marg) {
            assert!((a - b).abs() < 0.05, "{a} vs {b}");
        }
        let n = 5000;
        let mut sample_marg = vec![0.0; m];
        for _ in 0..n {
            for j in model.sample(200, &mut rng).unwrap().items() {
                sample_marg[j] += 1.0 / n as f64;
            }
        }
        for (a, b) in sample_marg.iter().zip(&marg) {
            assert!((a - b).abs() < 0.05, "{a} vs {b}");
        }
    }
}
