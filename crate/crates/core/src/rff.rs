//! Random Fourier features for the Gaussian RBF kernel
//! `k(x, y) = exp(-gamma * ||x - y||^2)`.
//!
//! Frequencies are drawn from `N(0, 2 gamma I)` (the kernel's spectral
//! density) and phases uniformly from `[0, 2π)`. The map is
//! data-independent, so it costs no privacy and can be released.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{BinaryDataset, BinaryRecord};
use crate::{Error, Result};

/// Default embedding dimension.
pub const DEFAULT_FEATURES: usize = 200;

/// A frozen embedding `z: {0,1}^m -> R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    m: usize,
    d: usize,
    gamma: f64,
    seed: Option<u64>,
    /// `d x m`, row-major.
    w: Vec<f64>,
    b: Vec<f64>,
}

/// Compact, reproducible description of a seeded [`FeatureMap`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureMapSpec {
    pub m: usize,
    pub d: usize,
    pub gamma: f64,
    pub seed: u64,
}

/// Draws a feature map from `rng`.
pub fn sample_feature_map<R: Rng + ?Sized>(m: usize, d: usize, gamma: f64, rng: &mut R) -> Result<FeatureMap> {
    if m == 0 || d == 0 {
        return Err(Error::Domain("feature map dimensions must be positive".into()));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::Domain(format!("gamma must be positive, got {gamma}")));
    }
    let normal = Normal::new(0.0, (2.0 * gamma).sqrt()).expect("valid normal");
    let w: Vec<f64> = (0..d * m).map(|_| normal.sample(rng)).collect();
    let two_pi = 2.0 * std::f64::consts::PI;
    let b: Vec<f64> = (0..d)
        .map(|_| {
            // guard against rounding up to exactly 2π
            let v = rng.random::<f64>() * two_pi;
            if v >= two_pi { 0.0 } else { v }
        })
        .collect();
    Ok(FeatureMap {
        m,
        d,
        gamma,
        seed: None,
        w,
        b,
    })
}

impl FeatureMap {
    /// The map determined by `seed`; identical seeds give identical maps.
    pub fn from_seed(m: usize, d: usize, gamma: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut map = sample_feature_map(m, d, gamma, &mut rng)?;
        map.seed = Some(seed);
        Ok(map)
    }

    pub fn from_spec(spec: &FeatureMapSpec) -> Result<Self> {
        Self::from_seed(spec.m, spec.d, spec.gamma, spec.seed)
    }

    /// The seed description, if this map was built from a seed.
    pub fn spec(&self) -> Option<FeatureMapSpec> {
        self.seed.map(|seed| FeatureMapSpec {
            m: self.m,
            d: self.d,
            gamma: self.gamma,
            seed,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.m
    }

    pub fn output_dim(&self) -> usize {
        self.d
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.w
    }

    pub fn phases(&self) -> &[f64] {
        &self.b
    }

    /// `sqrt(2/d) * [cos(<w_i, x> + b_i)]_i`.
    pub fn embed(&self, x: &BinaryRecord) -> Result<Vec<f64>> {
        if x.dim() != self.m {
            return Err(Error::Domain(format!(
                "record has dimension {} but the map expects {}",
                x.dim(),
                self.m
            )));
        }
        let items: Vec<usize> = x.items().collect();
        let scale = (2.0 / self.d as f64).sqrt();
        Ok((0..self.d)
            .map(|i| {
                let row = &self.w[i * self.m..(i + 1) * self.m];
                let dot: f64 = items.iter().map(|&j| row[j]).sum();
                scale * (dot + self.b[i]).cos()
            })
            .collect())
    }

    /// Embeds every record of `dataset`, in order.
    pub fn embed_all(&self, dataset: &BinaryDataset) -> Result<Vec<Vec<f64>>> {
        dataset.records().par_iter().map(|r| self.embed(r)).collect()
    }
}

/// `exp(-gamma * ||x - y||^2)`.
pub fn kernel_rbf(x: &BinaryRecord, y: &BinaryRecord, gamma: f64) -> f64 {
    let dist2 = x
        .bits()
        .iter()
        .zip(y.bits())
        .filter(|(a, b)| a != b)
        .count() as f64;
    (-gamma * dist2).exp()
}
