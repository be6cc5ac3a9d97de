//! WebAssembly bindings for the demo page in `www/`.
//!
//! The plain functions do the work and are tested natively; the
//! `#[wasm_bindgen]` wrappers only convert errors to strings.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

use dpgm::accountant::{self, PrivacyConfig, StageProfiles};
use dpgm::data::BinaryRecord;
use dpgm::dpnorm::NormHistogram;
use dpgm::rff::{kernel_rbf, FeatureMap};

/// Feature dimensions tried by [`kernel_errors`].
pub const FEATURE_DIMS: [usize; 6] = [16, 32, 64, 128, 256, 512];

/// Epsilon after each of `1..=epochs` epochs. k-means settings are fixed at
/// sigma_c = 4, sigma_k = 40 and 20 iterations.
pub fn epsilon_table(sigma_g: f64, q: f64, epochs: u32, delta: f64) -> Result<Vec<f64>, String> {
    if epochs == 0 || epochs > 200 {
        return Err("epochs must be between 1 and 200".into());
    }
    let cfg = PrivacyConfig::new(4.0, 40.0, sigma_g, q, 20, 1, delta);
    cfg.validate().map_err(|e| e.to_string())?;
    let profiles = StageProfiles::compute(&cfg).map_err(|e| e.to_string())?;
    Ok((1..=epochs as u64)
        .map(|e| profiles.epsilon(accountant::sgd_iterations_for_epochs(e, q), delta).0)
        .collect())
}

/// Mean |<z(x), z(y)> - k(x, y)| over `pairs` random record pairs for each
/// of [`FEATURE_DIMS`].
pub fn kernel_errors(m: usize, gamma: f64, pairs: usize, seed: u64) -> Result<Vec<f64>, String> {
    if m == 0 || m > 1000 || pairs == 0 || pairs > 10_000 {
        return Err("need 1 <= m <= 1000 and 1 <= pairs <= 10000".into());
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut record = || BinaryRecord::possibly_empty((0..m).map(|_| rng.random_range(0..2u8)).collect()).unwrap();
    let pairs: Vec<(BinaryRecord, BinaryRecord)> = (0..pairs).map(|_| (record(), record())).collect();
    FEATURE_DIMS
        .iter()
        .map(|&d| {
            let map = FeatureMap::from_seed(m, d, gamma, seed.wrapping_add(d as u64)).map_err(|e| e.to_string())?;
            let mut total = 0.0;
            for (x, y) in &pairs {
                let zx = map.embed(x).map_err(|e| e.to_string())?;
                let zy = map.embed(y).map_err(|e| e.to_string())?;
                let dot: f64 = zx.iter().zip(&zy).map(|(a, b)| a * b).sum();
                total += (dot - kernel_rbf(x, y, gamma)).abs();
            }
            Ok(total / pairs.len() as f64)
        })
        .collect()
}

#[derive(Debug, Serialize)]
pub struct HistogramDemo {
    pub counts: Vec<u64>,
    pub noisy_counts: Vec<f64>,
    pub bin: usize,
    pub bound: f64,
    pub c_max: f64,
}

/// Private norm selection on `n` synthetic norms drawn around `center`.
pub fn norm_selection(n: usize, center: f64, spread: f64, sigma_c: f64, bins: usize, seed: u64) -> Result<HistogramDemo, String> {
    if n == 0 || n > 1_000_000 {
        return Err("n must be between 1 and 1000000".into());
    }
    let c_max = 10.0;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let norms: Vec<f64> = (0..n)
        .map(|_| (center + spread * (rng.random::<f64>() - 0.5) * 2.0).max(0.0))
        .collect();
    let hist = NormHistogram::from_norms(&norms, c_max, bins).map_err(|e| e.to_string())?;
    let sel = hist.noisy_mode(sigma_c, &mut rng).map_err(|e| e.to_string())?;
    Ok(HistogramDemo {
        counts: hist.counts,
        noisy_counts: sel.noisy_counts,
        bin: sel.bin,
        bound: sel.bound,
        c_max,
    })
}

#[wasm_bindgen]
pub fn epsilon_curve(sigma_g: f64, q: f64, epochs: u32, delta: f64) -> Result<Vec<f64>, JsValue> {
    epsilon_table(sigma_g, q, epochs, delta).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn kernel_approximation(m: usize, gamma: f64, pairs: usize, seed: u32) -> Result<Vec<f64>, JsValue> {
    kernel_errors(m, gamma, pairs, seed as u64).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn feature_dims() -> Vec<u32> {
    FEATURE_DIMS.iter().map(|&d| d as u32).collect()
}

/// JSON with `counts`, `noisy_counts`, `bin`, `bound` and `c_max`.
#[wasm_bindgen]
pub fn dpnorm_histogram(n: usize, center: f64, spread: f64, sigma_c: f64, bins: usize, seed: u32) -> Result<String, JsValue> {
    norm_selection(n, center, spread, sigma_c, bins, seed as u64)
        .and_then(|h| serde_json::to_string(&h).map_err(|e| e.to_string()))
        .map_err(|e| JsValue::from_str(&e))
}
