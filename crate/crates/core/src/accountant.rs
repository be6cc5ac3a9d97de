//! Moments accountant for the full training pipeline.
//!
//! Each mechanism is summarized by `alpha(lambda)`, the log moment generating
//! function of its privacy loss. Independent mechanisms compose by adding
//! their alphas. The two mechanisms inside one SGD step share the sampled
//! batch, so they are combined with a Hölder split `j1 + j2 = 1`:
//! `j1 * alpha_1(lambda / j1) + j2 * alpha_2(lambda / j2)`, minimized over a
//! grid of splits. The final guarantee is
//! `eps = min_lambda (alpha_K(lambda) + alpha_S(lambda) - ln delta) / lambda`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::quadrature::{log_integrate, SimpsonSettings};
use crate::{Error, Result};

/// Default largest moment order considered.
pub const DEFAULT_LAMBDA_MAX: u32 = 32;

/// Default `j1` values of the Hölder split (`j2 = 1 - j1`).
pub const DEFAULT_SPLITS: [f64; 10] = [0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.5, 0.9];

/// Noise scales, sampling rate and iteration counts of one training run.
///
/// Every `sigma_*` multiplies the sensitivity of the quantity it perturbs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyConfig {
    /// Noise scale of the norm-bound histogram.
    pub sigma_c: f64,
    /// Noise scale of cluster sizes and sums.
    pub sigma_k: f64,
    /// Noise scale of the summed gradients.
    pub sigma_g: f64,
    /// Per-record inclusion probability of one SGD step.
    pub q: f64,
    /// k-means iterations.
    pub t_k: u64,
    /// SGD iterations.
    pub t_s: u64,
    pub delta: f64,
    /// Feature clip bound fixed at 1 (RBF kernel), so no norm selection is charged.
    #[serde(default = "default_true")]
    pub rbf_mode: bool,
    #[serde(default = "default_lambda_max")]
    pub lambda_max: u32,
    /// Use `lambda (lambda + 1) / (2 sigma^2)` for the plain Gaussian
    /// mechanism instead of the `/(4 sigma^2)` form.
    #[serde(default)]
    pub strict_gaussian: bool,
    /// `j1` values of the split grid.
    #[serde(default = "default_splits")]
    pub splits: Vec<f64>,
}

fn default_true() -> bool {
    true
}

fn default_lambda_max() -> u32 {
    DEFAULT_LAMBDA_MAX
}

pub fn default_splits() -> Vec<f64> {
    DEFAULT_SPLITS.to_vec()
}

impl PrivacyConfig {
    /// A configuration with the default flags (RBF mode, λ ≤ 32, (λ²+λ)/4σ²
    /// Gaussian moment, default split grid).
    pub fn new(sigma_c: f64, sigma_k: f64, sigma_g: f64, q: f64, t_k: u64, t_s: u64, delta: f64) -> Self {
        Self {
            sigma_c,
            sigma_k,
            sigma_g,
            q,
            t_k,
            t_s,
            delta,
            rbf_mode: true,
            lambda_max: DEFAULT_LAMBDA_MAX,
            strict_gaussian: false,
            splits: default_splits(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, s) in [
            ("sigma_c", self.sigma_c),
            ("sigma_k", self.sigma_k),
            ("sigma_g", self.sigma_g),
        ] {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Domain(format!("{name} must be positive, got {s}")));
            }
        }
        if !(self.q > 0.0 && self.q <= 1.0) {
            return Err(Error::Domain(format!("q must lie in (0, 1], got {}", self.q)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Domain(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if self.lambda_max == 0 {
            return Err(Error::Domain("lambda_max must be at least 1".into()));
        }
        split_pairs(&self.splits)?;
        Ok(())
    }

    /// The Hölder split pairs `(j1, j2)`.
    pub fn split_pairs(&self) -> Result<Vec<(f64, f64)>> {
        split_pairs(&self.splits)
    }
}

fn split_pairs(splits: &[f64]) -> Result<Vec<(f64, f64)>> {
    if splits.is_empty() {
        return Err(Error::Domain("split grid is empty".into()));
    }
    splits
        .iter()
        .map(|&j1| {
            if j1 > 0.0 && j1 < 1.0 {
                Ok((j1, 1.0 - j1))
            } else {
                Err(Error::Domain(format!("split j1={j1} outside (0, 1)")))
            }
        })
        .collect()
}

/// SGD iterations in `epochs` passes: one epoch is `ceil(1/q)` steps.
pub fn sgd_iterations_for_epochs(epochs: u64, q: f64) -> u64 {
    // Absorb representation error so that 1/0.01 counts as 100 steps.
    let per_epoch = (1.0 / q - 1e-9).ceil().max(1.0) as u64;
    epochs * per_epoch
}

/// Log-MGF of the plain Gaussian mechanism with noise scale `sigma`.
pub fn alpha_gaussian(lambda: f64, sigma: f64, strict: bool) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
    }
    if !(lambda > 0.0) {
        return Err(Error::Domain(format!("lambda must be positive, got {lambda}")));
    }
    let denom = if strict { 2.0 } else { 4.0 };
    Ok((lambda * lambda + lambda) / (denom * sigma * sigma))
}

/// Log-MGF of the Poisson-subsampled Gaussian mechanism.
pub fn alpha_subsampled_gaussian(lambda: f64, sigma: f64, q: f64) -> Result<f64> {
    alpha_subsampled_gaussian_with(lambda, sigma, q, &SimpsonSettings::default())
}

/// [`alpha_subsampled_gaussian`] with an explicit quadrature schedule.
///
/// With `mu0 = N(0, sigma^2)` and `mu1 = (1 - q) mu0 + q N(1, sigma^2)`,
/// returns `ln max(E1, E2)` where `E1 = ∫ mu0 (mu0/mu1)^lambda` and
/// `E2 = ∫ mu1 (mu1/mu0)^lambda`.
pub fn alpha_subsampled_gaussian_with(
    lambda: f64,
    sigma: f64,
    q: f64,
    settings: &SimpsonSettings,
) -> Result<f64> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Domain(format!("lambda must be positive, got {lambda}")));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Domain(format!("q must lie in [0, 1], got {q}")));
    }
    if q == 0.0 {
        return Ok(0.0);
    }

    let var2 = 2.0 * sigma * sigma;
    let log_norm = -0.5 * (std::f64::consts::PI * var2).ln();
    let log_keep = (-q).ln_1p();
    let log_q = q.ln();
    // ln(mu1(x) / mu0(x))
    let log_ratio = move |x: f64| {
        let t = (2.0 * x - 1.0) / var2;
        if q == 1.0 {
            t
        } else {
            log_add_exp(log_keep, log_q + t)
        }
    };
    let log_mu0 = move |x: f64| -x * x / var2 + log_norm;

    // The E1 integrand peaks in [-lambda, 0] and the E2 integrand in
    // [0, lambda + 1]; both decay like the base Gaussian beyond that.
    let margin = (20.0 * sigma).max(20.0);
    let (lo, hi) = (-lambda - margin, 1.0 + lambda + margin);
    let min_intervals = (8.0 * (hi - lo) / sigma).ceil() as usize;

    let e1 = log_integrate(|x| log_mu0(x) - lambda * log_ratio(x), lo, hi, min_intervals, settings)?;
    let e2 = log_integrate(
        |x| log_mu0(x) + (lambda + 1.0) * log_ratio(x),
        lo,
        hi,
        min_intervals,
        settings,
    )?;
    let alpha = e1.max(e2);
    if !alpha.is_finite() {
        return Err(Error::Numerical(format!(
            "non-finite alpha for lambda={lambda}, sigma={sigma}, q={q}"
        )));
    }
    // Both integrals are at least 1 in exact arithmetic.
    Ok(alpha.max(0.0))
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Log-MGF of one k-means iteration (norm selection when not in RBF mode,
/// then noisy sizes and noisy sums).
pub fn alpha_kmeans_iteration(lambda: f64, cfg: &PrivacyConfig) -> Result<f64> {
    let strict = cfg.strict_gaussian;
    let sizes_and_sums = 2.0 * alpha_gaussian(lambda, cfg.sigma_k, strict)?;
    if cfg.rbf_mode {
        Ok(sizes_and_sums)
    } else {
        Ok(alpha_gaussian(lambda, cfg.sigma_c, strict)? + sizes_and_sums)
    }
}

/// Log-MGF of the whole clustering stage: `T_K` composed iterations. The norm
/// selection is charged every iteration.
pub fn alpha_kmeans(lambda: f64, cfg: &PrivacyConfig) -> Result<f64> {
    if cfg.t_k == 0 {
        return Ok(0.0);
    }
    Ok(cfg.t_k as f64 * alpha_kmeans_iteration(lambda, cfg)?)
}

/// Log-MGF of a single SGD step, minimized over the split grid.
pub fn alpha_sgd_step(lambda: f64, cfg: &PrivacyConfig, splits: &[(f64, f64)]) -> Result<f64> {
    if splits.is_empty() {
        return Err(Error::Domain("split grid is empty".into()));
    }
    if cfg.q == 0.0 {
        return Ok(0.0);
    }
    let mut best = f64::INFINITY;
    for &(j1, j2) in splits {
        if !(j1 > 0.0 && j2 > 0.0 && ((j1 + j2) - 1.0).abs() < 1e-12) {
            return Err(Error::Domain(format!("invalid split ({j1}, {j2})")));
        }
        let norm_part = j1 * alpha_subsampled_gaussian(lambda / j1, cfg.sigma_c, cfg.q)?;
        let grad_part = j2 * alpha_subsampled_gaussian(lambda / j2, cfg.sigma_g, cfg.q)?;
        best = best.min(norm_part + grad_part);
    }
    Ok(best)
}

/// Log-MGF of all `T_S` SGD steps.
pub fn alpha_sgd(lambda: u32, cfg: &PrivacyConfig, splits: &[(f64, f64)]) -> Result<f64> {
    if lambda == 0 {
        return Err(Error::Domain("lambda must be positive".into()));
    }
    for &(j1, j2) in splits {
        if !(j1 > 0.0 && j2 > 0.0 && ((j1 + j2) - 1.0).abs() < 1e-12) {
            return Err(Error::Domain(format!("invalid split ({j1}, {j2})")));
        }
    }
    if cfg.t_s == 0 || cfg.q == 0.0 {
        return Ok(0.0);
    }
    Ok(cfg.t_s as f64 * alpha_sgd_step(lambda as f64, cfg, splits)?)
}

/// Log-MGF values on an integer grid of moment orders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaProfile {
    pub lambda_grid: Vec<u32>,
    pub values: Vec<f64>,
}

/// Result of [`epsilon_for_delta`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyReport {
    pub epsilon: f64,
    pub delta: f64,
    pub argmin_lambda: u32,
    /// Clustering stage, all `T_K` iterations.
    pub kmeans: AlphaProfile,
    /// One SGD step; multiply by `T_S` for the training stage.
    pub sgd_step: AlphaProfile,
    pub total: AlphaProfile,
    pub config: PrivacyConfig,
}

/// Per-order alphas of the two stages, from which ε for any number of SGD
/// steps follows without further integration.
#[derive(Debug, Clone, PartialEq)]
pub struct StageProfiles {
    pub lambda_grid: Vec<u32>,
    pub kmeans: Vec<f64>,
    pub sgd_step: Vec<f64>,
}

impl StageProfiles {
    pub fn compute(cfg: &PrivacyConfig) -> Result<Self> {
        cfg.validate()?;
        let splits = cfg.split_pairs()?;
        let lambda_grid: Vec<u32> = (1..=cfg.lambda_max).collect();
        let kmeans = lambda_grid
            .iter()
            .map(|&l| alpha_kmeans(l as f64, cfg))
            .collect::<Result<Vec<_>>>()?;
        let sgd_step = if cfg.t_s == 0 {
            vec![0.0; lambda_grid.len()]
        } else {
            lambda_grid
                .par_iter()
                .map(|&l| alpha_sgd_step(l as f64, cfg, &splits))
                .collect::<Result<Vec<_>>>()?
        };
        Ok(Self {
            lambda_grid,
            kmeans,
            sgd_step,
        })
    }

    /// `(epsilon, argmin lambda)` after `t_s` SGD steps.
    pub fn epsilon(&self, t_s: u64, delta: f64) -> (f64, u32) {
        let log_delta = delta.ln();
        let mut best = (f64::INFINITY, self.lambda_grid[0]);
        for (i, &l) in self.lambda_grid.iter().enumerate() {
            let total = self.kmeans[i] + t_s as f64 * self.sgd_step[i];
            let eps = (total - log_delta) / l as f64;
            if eps < best.0 {
                best = (eps, l);
            }
        }
        best
    }
}

/// Smallest ε over integer λ in `[1, lambda_max]` for the configured δ.
pub fn epsilon_for_delta(cfg: &PrivacyConfig) -> Result<PrivacyReport> {
    let profiles = StageProfiles::compute(cfg)?;
    let (epsilon, argmin_lambda) = profiles.epsilon(cfg.t_s, cfg.delta);
    let total = profiles
        .kmeans
        .iter()
        .zip(&profiles.sgd_step)
        .map(|(k, s)| k + cfg.t_s as f64 * s)
        .collect();
    Ok(PrivacyReport {
        epsilon,
        delta: cfg.delta,
        argmin_lambda,
        kmeans: AlphaProfile {
            lambda_grid: profiles.lambda_grid.clone(),
            values: profiles.kmeans.clone(),
        },
        sgd_step: AlphaProfile {
            lambda_grid: profiles.lambda_grid.clone(),
            values: profiles.sgd_step.clone(),
        },
        total: AlphaProfile {
            lambda_grid: profiles.lambda_grid,
            values: total,
        },
        config: cfg.clone(),
    })
}

/// The conventional δ for a dataset of `n` records.
pub fn default_delta(n: usize) -> f64 {
    1.0 / n as f64
}
