//! Private selection of a clipping bound.
//!
//! `(0, C_max]` is cut into `w` equal bins with upper edges
//! `C_j = j * C_max / w`. Each input vector falls into the bin holding its L2
//! norm, Gaussian noise of standard deviation `sqrt(2) * sigma_c` is added to
//! every count, and the upper edge of the noisiest bin is returned. One
//! vector touches one bin, so replacing a vector moves at most two counts by
//! one: the histogram has L2 sensitivity `sqrt(2)` whatever the norms are.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::{l2_norm, Error, Result};

pub const DEFAULT_C_MAX: f64 = 10.0;
pub const DEFAULT_BINS: usize = 100;

/// Norm counts over `w` bins of `(0, c_max]`. Norms of exactly zero count in
/// the first bin; norms above `c_max` are not counted.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormHistogram {
    pub c_max: f64,
    pub w: usize,
    pub counts: Vec<u64>,
}

/// Outcome of one noisy-mode selection.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Selection {
    /// 1-based index of the selected bin.
    pub bin: usize,
    /// Its upper edge `C_bin`, the selected bound.
    pub bound: f64,
    pub noisy_counts: Vec<f64>,
}

impl NormHistogram {
    pub fn from_norms(norms: &[f64], c_max: f64, w: usize) -> Result<Self> {
        if w == 0 {
            return Err(Error::Domain("bin count w must be at least 1".into()));
        }
        if !(c_max > 0.0 && c_max.is_finite()) {
            return Err(Error::Domain(format!("c_max must be positive, got {c_max}")));
        }
        if norms.is_empty() {
            return Err(Error::Domain("no vectors to take norms of".into()));
        }
        let mut hist = Self {
            c_max,
            w,
            counts: vec![0; w],
        };
        for &norm in norms {
            if !norm.is_finite() || norm < 0.0 {
                return Err(Error::Numerical(format!("invalid norm {norm}")));
            }
            if let Some(j) = hist.bin_of(norm) {
                hist.counts[j - 1] += 1;
            }
        }
        Ok(hist)
    }

    pub fn from_vectors(vectors: &[Vec<f64>], c_max: f64, w: usize) -> Result<Self> {
        let norms: Vec<f64> = vectors.iter().map(|v| l2_norm(v)).collect();
        Self::from_norms(&norms, c_max, w)
    }

    /// Upper edge `C_j` of bin `j` (1-based).
    pub fn edge(&self, j: usize) -> f64 {
        j as f64 * self.c_max / self.w as f64
    }

    /// 1-based bin with `C_{j-1} < norm <= C_j`, or `None` above `c_max`.
    pub fn bin_of(&self, norm: f64) -> Option<usize> {
        if norm > self.c_max {
            return None;
        }
        if norm <= self.edge(1) {
            return Some(1);
        }
        let mut j = ((norm * self.w as f64 / self.c_max).ceil() as usize).clamp(1, self.w);
        // correct for rounding in the division
        while j > 1 && norm <= self.edge(j - 1) {
            j -= 1;
        }
        while j < self.w && norm > self.edge(j) {
            j += 1;
        }
        Some(j)
    }

    /// Adds `N(0, (sqrt(2) sigma_c)^2)` to each count and picks the largest,
    /// breaking ties toward the smaller bound. `sigma_c = 0` disables the noise.
    pub fn noisy_mode<R: Rng + ?Sized>(&self, sigma_c: f64, rng: &mut R) -> Result<Selection> {
        if !(sigma_c >= 0.0 && sigma_c.is_finite()) {
            return Err(Error::Domain(format!("sigma_c must be non-negative, got {sigma_c}")));
        }
        let noisy_counts: Vec<f64> = if sigma_c == 0.0 {
            self.counts.iter().map(|&c| c as f64).collect()
        } else {
            let noise = Normal::new(0.0, std::f64::consts::SQRT_2 * sigma_c).expect("valid normal");
            self.counts.iter().map(|&c| c as f64 + noise.sample(rng)).collect()
        };
        let mut best = 0;
        for (i, &v) in noisy_counts.iter().enumerate() {
            if v > noisy_counts[best] {
                best = i;
            }
        }
        Ok(Selection {
            bin: best + 1,
            bound: self.edge(best + 1),
            noisy_counts,
        })
    }
}

/// Selects a clip bound for `vectors` privately.
pub fn dp_norm<R: Rng + ?Sized>(
    vectors: &[Vec<f64>],
    sigma_c: f64,
    c_max: f64,
    w: usize,
    rng: &mut R,
) -> Result<f64> {
    Ok(NormHistogram::from_vectors(vectors, c_max, w)?
        .noisy_mode(sigma_c, rng)?
        .bound)
}

/// [`dp_norm`] on precomputed norms.
pub fn dp_norm_from_norms<R: Rng + ?Sized>(
    norms: &[f64],
    sigma_c: f64,
    c_max: f64,
    w: usize,
    rng: &mut R,
) -> Result<f64> {
    Ok(NormHistogram::from_norms(norms, c_max, w)?
        .noisy_mode(sigma_c, rng)?
        .bound)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn select(norms: &[f64]) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        dp_norm_from_norms(norms, 0.0, DEFAULT_C_MAX, DEFAULT_BINS, &mut rng).unwrap()
    }

    #[test]
    fn noiseless_examples() {
        assert!((select(&[0.55, 0.58, 9.9]) - 0.6).abs() < 1e-12);
        assert!((select(&[2.34; 64]) - 2.4).abs() < 1e-12);
        assert!((select(&[0.0, 0.0, 5.0]) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn bins_are_half_open_on_the_left() {
        let h = NormHistogram::from_norms(&[0.1, 0.2, 10.0, 10.5], 10.0, 100).unwrap();
        assert_eq!(h.bin_of(0.1), Some(1));
        assert_eq!(h.bin_of(0.30000000000000004), Some(4));
        assert_eq!(h.bin_of(0.3), Some(3));
        assert_eq!(h.bin_of(10.0), Some(100));
        assert_eq!(h.bin_of(10.5), None);
        assert_eq!(h.counts.iter().sum::<u64>(), 3);
    }

    #[test]
    fn ties_prefer_smaller_bound() {
        assert!((select(&[1.05, 7.05]) - 1.1).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(dp_norm(&[], 1.0, 10.0, 100, &mut rng).is_err());
        assert!(dp_norm(&[vec![f64::NAN]], 1.0, 10.0, 100, &mut rng).is_err());
        assert!(dp_norm(&[vec![1.0]], 1.0, 10.0, 0, &mut rng).is_err());
        assert!(dp_norm(&[vec![1.0]], -1.0, 10.0, 100, &mut rng).is_err());
    }

    #[test]
    fn one_vector_moves_at_most_two_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let mut norms: Vec<f64> = (0..30).map(|_| rng.random_range(0.0..12.0)).collect();
            let before = NormHistogram::from_norms(&norms, 10.0, 50).unwrap();
            let i = rng.random_range(0..norms.len());
            norms[i] = rng.random_range(0.0..12.0);
            let after = NormHistogram::from_norms(&norms, 10.0, 50).unwrap();
            let diff: f64 = before
                .counts
                .iter()
                .zip(&after.counts)
                .map(|(a, b)| (*a as f64 - *b as f64).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(diff <= std::f64::consts::SQRT_2 + 1e-12);
        }
    }

    #[test]
    fn clear_mode_wins_under_small_noise() {
        let sigma = 0.5;
        // mode leads runner-up by 20 > 10 * sqrt(2) * sigma
        let mut norms = vec![3.05; 40];
        norms.extend(vec![6.05; 20]);
        let h = NormHistogram::from_norms(&norms, 10.0, 100).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let hits = (0..1000)
            .filter(|_| h.noisy_mode(sigma, &mut rng).unwrap().bin == 31)
            .count();
        assert_eq!(hits, 1000);
    }

    proptest! {
        #[test]
        fn result_is_a_positive_bin_edge(norms in prop::collection::vec(0.0f64..15.0, 1..50), seed in any::<u64>(), sigma in 0.0f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = NormHistogram::from_norms(&norms, 10.0, 100).unwrap();
            let s = h.noisy_mode(sigma, &mut rng).unwrap();
            prop_assert!(s.bin >= 1 && s.bin <= 100);
            prop_assert!(s.bound > 0.0);
            prop_assert!((s.bound - h.edge(s.bin)).abs() == 0.0);
        }
    }
}
