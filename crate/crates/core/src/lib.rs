//! Differentially private generative modelling for binary record data.
//!
//! The pipeline partitions a dataset with private kernel k-means over random
//! Fourier features, trains one restricted Boltzmann machine per cluster with
//! DP-SGD whose clipping bound is chosen privately per batch, and tracks the
//! total privacy cost with a moments accountant. Trained mixtures generate
//! synthetic datasets that can be scored with counting-query workloads.

pub mod accountant;
pub mod data;
pub mod dpnorm;
pub mod dpsgd;
pub mod error;
pub mod eval;
pub mod kmeans;
pub mod mixture;
pub mod quadrature;
pub mod rbm;
pub mod rff;
pub mod seeds;

pub use error::{Error, Result};

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Rescales `v` to L2 norm at most `bound`: `v / max(1, ||v|| / bound)`.
pub fn clip_to_norm(v: &[f64], bound: f64) -> Vec<f64> {
    let factor = (l2_norm(v) / bound).max(1.0);
    if factor == 1.0 {
        v.to_vec()
    } else {
        v.iter().map(|x| x / factor).collect()
    }
}
