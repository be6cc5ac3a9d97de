//! One private SGD step with an adaptively chosen clip bound.
//!
//! A batch is Poisson-sampled, per-example gradients are clipped to a bound
//! picked by [`crate::dpnorm`] from their norms, Gaussian noise is added to
//! the clipped sum and the result divided by the target batch size `L`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::BinaryRecord;
use crate::dpnorm::NormHistogram;
use crate::{clip_to_norm, l2_norm, Error, Result};

/// Anything that can report one gradient per example. Gradients may share
/// data-independent statistics but must not otherwise mix examples.
pub trait GradientModel {
    fn parameters(&self) -> &[f64];
    fn parameters_mut(&mut self) -> &mut [f64];
    /// Loss gradients, one per record of `batch`, each of length
    /// `parameters().len()`.
    fn per_example_gradients(&mut self, batch: &[&BinaryRecord]) -> Result<Vec<Vec<f64>>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub sigma_c: f64,
    pub sigma_g: f64,
    /// Target batch size `L`.
    pub batch_size: f64,
    pub eta: f64,
    pub c_max: f64,
    pub bins: usize,
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.batch_size >= 1.0 && self.batch_size.is_finite()) {
            return Err(Error::Validation(format!("batch size must be >= 1, got {}", self.batch_size)));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::Validation(format!("learning rate must be non-negative, got {}", self.eta)));
        }
        for (name, v) in [("sigma_c", self.sigma_c), ("sigma_g", self.sigma_g)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!("{name} must be non-negative, got {v}")));
            }
        }
        if !(self.c_max > 0.0 && self.c_max.is_finite()) || self.bins == 0 {
            return Err(Error::Validation("c_max must be positive and bins at least 1".into()));
        }
        Ok(())
    }

    /// Sampling rate for a cluster of `n` records, capped at 1.
    pub fn sampling_rate(&self, n: usize) -> f64 {
        (self.batch_size / n as f64).min(1.0)
    }
}

/// State carried between steps of one model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdState {
    /// Bound used by the last non-empty batch; an empty batch reuses it.
    pub prev_clip: f64,
}

impl SgdState {
    pub fn new(cfg: &SgdConfig) -> Self {
        Self {
            prev_clip: cfg.c_max / 2.0,
        }
    }
}

/// `g / max(1, ||g|| / c_s)`.
pub fn clip_gradient(g: &[f64], c_s: f64) -> Result<Vec<f64>> {
    if !(c_s > 0.0) {
        return Err(Error::Domain(format!("clip bound must be positive, got {c_s}")));
    }
    Ok(clip_to_norm(g, c_s))
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoisyGradient {
    pub clipped_sum: Vec<f64>,
    /// `(clipped_sum + noise) / L`.
    pub noisy_mean: Vec<f64>,
    pub clip_bound: f64,
}

/// Unreleased norm statistics of a batch, for diagnostics only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormSummary {
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepReport {
    pub batch_size: usize,
    pub q: f64,
    pub clip_bound: f64,
    /// Bin picked by the private norm selection; `None` for an empty batch.
    pub clip_bin: Option<usize>,
    /// Exact per-example gradient norms. Not privatized: keep out of anything
    /// released.
    #[serde(rename = "grad_norms_nonprivate")]
    pub norms: Option<NormSummary>,
}

/// Clips `grads` to a privately selected bound and noises their sum.
///
/// `dim` is the parameter count, needed when `grads` is empty.
pub fn noisy_gradient<R: Rng + ?Sized>(
    grads: &[Vec<f64>],
    dim: usize,
    cfg: &SgdConfig,
    state: &mut SgdState,
    rng: &mut R,
) -> Result<(NoisyGradient, Option<usize>)> {
    let (clipped_sum, clip_bound, bin) = if grads.is_empty() {
        (vec![0.0; dim], state.prev_clip, None)
    } else {
        if let Some(g) = grads.iter().find(|g| g.len() != dim) {
            return Err(Error::Domain(format!("gradient has length {} but the model has {dim}", g.len())));
        }
        let norms: Vec<f64> = grads.par_iter().map(|g| l2_norm(g)).collect();
        let selection = NormHistogram::from_norms(&norms, cfg.c_max, cfg.bins)?.noisy_mode(cfg.sigma_c, rng)?;
        let c_s = selection.bound;
        let sum = grads
            .par_iter()
            .map(|g| clip_to_norm(g, c_s))
            .reduce(
                || vec![0.0; dim],
                |mut a, b| {
                    a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
                    a
                },
            );
        state.prev_clip = c_s;
        (sum, c_s, Some(selection.bin))
    };
    let std = std::f64::consts::SQRT_2 * cfg.sigma_g * clip_bound;
    let noisy_mean = if std > 0.0 {
        let noise = Normal::new(0.0, std).expect("valid normal");
        clipped_sum
            .iter()
            .map(|s| (s + noise.sample(rng)) / cfg.batch_size)
            .collect()
    } else {
        clipped_sum.iter().map(|s| s / cfg.batch_size).collect()
    };
    Ok((
        NoisyGradient {
            clipped_sum,
            noisy_mean,
            clip_bound,
        },
        bin,
    ))
}

/// Poisson-samples a batch from `cluster` with rate `q`.
pub fn sample_batch<'a, R: Rng + ?Sized>(cluster: &[&'a BinaryRecord], q: f64, rng: &mut R) -> Vec<&'a BinaryRecord> {
    cluster.iter().copied().filter(|_| rng.random::<f64>() < q).collect()
}

fn summarize(grads: &[Vec<f64>]) -> Option<NormSummary> {
    if grads.is_empty() {
        return None;
    }
    let mut norms: Vec<f64> = grads.iter().map(|g| l2_norm(g)).collect();
    norms.sort_by(f64::total_cmp);
    Some(NormSummary {
        min: norms[0],
        median: norms[norms.len() / 2],
        max: norms[norms.len() - 1],
    })
}

/// One step on `model` over `cluster`. Batch sampling draws from
/// `sampling_rng`; norm selection and gradient noise from `noise_rng`.
pub fn dp_sgd_step<M, R1, R2>(
    model: &mut M,
    cluster: &[&BinaryRecord],
    cfg: &SgdConfig,
    state: &mut SgdState,
    sampling_rng: &mut R1,
    noise_rng: &mut R2,
) -> Result<StepReport>
where
    M: GradientModel + ?Sized,
    R1: Rng + ?Sized,
    R2: Rng + ?Sized,
{
    if cluster.is_empty() {
        return Err(Error::Domain("cannot take a step on an empty cluster".into()));
    }
    let q = cfg.sampling_rate(cluster.len());
    let batch = sample_batch(cluster, q, sampling_rng);
    let grads = if batch.is_empty() {
        Vec::new()
    } else {
        model.per_example_gradients(&batch)?
    };
    if grads.len() != batch.len() {
        return Err(Error::Domain("model returned the wrong number of gradients".into()));
    }
    let dim = model.parameters().len();
    let (noisy, bin) = noisy_gradient(&grads, dim, cfg, state, noise_rng)?;
    if noisy.noisy_mean.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite noisy gradient".into()));
    }
    for (p, g) in model.parameters_mut().iter_mut().zip(&noisy.noisy_mean) {
        *p -= cfg.eta * g;
    }
    Ok(StepReport {
        batch_size: batch.len(),
        q,
        clip_bound: noisy.clip_bound,
        clip_bin: bin,
        norms: summarize(&grads),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Loss `0.5 ||theta - x||^2` per record, with `x` the record's bits.
    struct Quadratic {
        theta: Vec<f64>,
    }

    impl GradientModel for Quadratic {
        fn parameters(&self) -> &[f64] {
            &self.theta
        }
        fn parameters_mut(&mut self) -> &mut [f64] {
            &mut self.theta
        }
        fn per_example_gradients(&mut self, batch: &[&BinaryRecord]) -> Result<Vec<Vec<f64>>> {
            Ok(batch
                .iter()
                .map(|r| self.theta.iter().zip(r.to_f64()).map(|(t, x)| t - x).collect())
                .collect())
        }
    }

    /// Uniform draws just below 1, so no record is ever sampled.
    struct AllOnes;

    impl rand::RngCore for AllOnes {
        fn next_u32(&mut self) -> u32 {
            u32::MAX
        }
        fn next_u64(&mut self) -> u64 {
            u64::MAX
        }
        fn fill_bytes(&mut self, dst: &mut [u8]) {
            dst.fill(0xff);
        }
    }

    fn cfg(sigma: f64, eta: f64, batch_size: f64) -> SgdConfig {
        SgdConfig {
            sigma_c: sigma,
            sigma_g: sigma,
            batch_size,
            eta,
            c_max: 10.0,
            bins: 100,
        }
    }

    fn records(m: usize, n: usize, seed: u64) -> Vec<BinaryRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| BinaryRecord::possibly_empty((0..m).map(|_| rng.random_range(0..2u8)).collect()).unwrap())
            .collect()
    }

    #[test]
    fn clip_examples() {
        let g = vec![3.0, 4.0];
        let c = clip_gradient(&g, 2.5).unwrap();
        assert!((l2_norm(&c) - 2.5).abs() < 1e-12);
        assert!((c[0] / c[1] - 0.75).abs() < 1e-12);
        assert_eq!(clip_gradient(&[0.0, 0.0], 1.0).unwrap(), vec![0.0, 0.0]);
        assert_eq!(clip_gradient(&g, 5.0).unwrap(), g);
        assert!(clip_gradient(&g, 0.0).is_err());
    }

    #[test]
    fn noiseless_step_is_gradient_descent() {
        let m = 5;
        let data = records(m, 40, 1);
        let cluster: Vec<&BinaryRecord> = data.iter().collect();
        let theta0 = vec![0.5; m];
        // every gradient has norm sqrt(5)/2 < 1.2, the modal edge; q = 1
        let c = cfg(0.0, 0.1, 40.0);
        let mut model = Quadratic { theta: theta0.clone() };
        let mut state = SgdState::new(&c);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let report = dp_sgd_step(&mut model, &cluster, &c, &mut state, &mut rng.clone(), &mut rng).unwrap();
        assert_eq!(report.batch_size, 40);
        assert!(report.clip_bound >= 5f64.sqrt() / 2.0);
        let mut expected = theta0.clone();
        for (j, e) in expected.iter_mut().enumerate() {
            let mean_grad: f64 = data.iter().map(|r| theta0[j] - r.bits()[j] as f64).sum::<f64>() / 40.0;
            *e -= 0.1 * mean_grad;
        }
        for (a, b) in model.theta.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let data = records(6, 30, 3);
        let cluster: Vec<&BinaryRecord> = data.iter().collect();
        let c = cfg(1.0, 0.0, 10.0);
        let mut model = Quadratic { theta: vec![0.3; 6] };
        let mut state = SgdState::new(&c);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        dp_sgd_step(&mut model, &cluster, &c, &mut state, &mut rng.clone(), &mut rng).unwrap();
        assert_eq!(model.theta, vec![0.3; 6]);
    }

    #[test]
    fn noise_has_zero_mean() {
        let c = SgdConfig {
            sigma_c: 0.0,
            sigma_g: 1.0,
            ..cfg(0.0, 0.1, 8.0)
        };
        let grads: Vec<Vec<f64>> = (0..8).map(|i| vec![0.1 * i as f64, 0.5, -0.2]).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let trials = 10_000;
        let mut mean = vec![0.0; 3];
        let mut c_s = 0.0;
        for _ in 0..trials {
            let mut state = SgdState::new(&c);
            let (ng, _) = noisy_gradient(&grads, 3, &c, &mut state, &mut rng).unwrap();
            c_s = ng.clip_bound;
            for (m, (n, s)) in mean.iter_mut().zip(ng.noisy_mean.iter().zip(&ng.clipped_sum)) {
                *m += (n - s / c.batch_size) / trials as f64;
            }
        }
        let tol = 3.0 * std::f64::consts::SQRT_2 * c.sigma_g * c_s / (c.batch_size * 100.0);
        for m in mean {
            assert!(m.abs() < tol, "{m} vs {tol}");
        }
    }

    #[test]
    fn one_changed_record_moves_clipped_sum_by_at_most_two_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..200 {
            let dim = 4;
            let mut grads: Vec<Vec<f64>> = (0..10)
                .map(|_| (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect())
                .collect();
            let c_s = rng.random_range(0.1..4.0);
            let sum = |gs: &[Vec<f64>]| {
                let mut s = vec![0.0; dim];
                for g in gs {
                    for (a, b) in s.iter_mut().zip(clip_gradient(g, c_s).unwrap()) {
                        *a += b;
                    }
                }
                s
            };
            let before = sum(&grads);
            grads[3] = (0..dim).map(|_| rng.random_range(-30.0..30.0)).collect();
            let after = sum(&grads);
            let diff: Vec<f64> = before.iter().zip(&after).map(|(a, b)| a - b).collect();
            assert!(l2_norm(&diff) <= 2.0 * c_s + 1e-12);
        }
    }

    #[test]
    fn clip_bound_is_selected_from_batch_norms() {
        let c = cfg(0.0, 0.0, 4.0);
        let grads = vec![vec![2.34, 0.0], vec![0.0, 2.34], vec![2.34, 0.0], vec![9.0, 0.0]];
        let mut state = SgdState::new(&c);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (ng, bin) = noisy_gradient(&grads, 2, &c, &mut state, &mut rng).unwrap();
        assert!((ng.clip_bound - 2.4).abs() < 1e-12);
        assert_eq!(bin, Some(24));
        assert_eq!(state.prev_clip, ng.clip_bound);
    }

    #[test]
    fn empty_batch_emits_noise_at_previous_bound() {
        let c = SgdConfig {
            sigma_c: 0.0,
            sigma_g: 1.0,
            ..cfg(0.0, 0.1, 5.0)
        };
        let mut state = SgdState::new(&c);
        assert_eq!(state.prev_clip, 5.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (ng, bin) = noisy_gradient(&[], 3, &c, &mut state, &mut rng).unwrap();
        assert_eq!(bin, None);
        assert_eq!(ng.clip_bound, 5.0);
        assert_eq!(ng.clipped_sum, vec![0.0; 3]);
        assert!(ng.noisy_mean.iter().all(|v| *v != 0.0));

        // a step on a cluster that samples nothing still moves the parameters
        let data = records(3, 2, 8);
        let cluster: Vec<&BinaryRecord> = data.iter().collect();
        let c = SgdConfig { batch_size: 1.0, ..c };
        let mut model = Quadratic { theta: vec![0.0; 3] };
        let mut state = SgdState::new(&c);
        let mut never = AllOnes;
        let report = dp_sgd_step(&mut model, &cluster, &c, &mut state, &mut never, &mut rng).unwrap();
        assert_eq!(report.batch_size, 0);
        assert!(model.theta.iter().all(|v| *v != 0.0));
    }

    #[test]
    fn batch_size_is_binomial() {
        let data = records(3, 1000, 9);
        let cluster: Vec<&BinaryRecord> = data.iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let trials = 2000;
        let total: usize = (0..trials).map(|_| sample_batch(&cluster, 0.05, &mut rng).len()).sum();
        let mean = total as f64 / trials as f64;
        let se = (1000.0 * 0.05 * 0.95 / trials as f64).sqrt();
        assert!((mean - 50.0).abs() < 4.0 * se, "{mean}");
    }
}
