//! Private kernel k-means: noisy Lloyd iterations over clipped random
//! Fourier features.
//!
//! Each iteration assigns every record to its nearest center, then releases
//! per-cluster sizes with noise `N(0, 2 sigma_k^2)` and per-cluster feature
//! sums with noise `N(0, 2 C_s^2 sigma_k^2 I)`. Centers are the noisy sums
//! divided by the noisy sizes. Only the noisy quantities leave this module.

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::data::BinaryDataset;
use crate::dpnorm::{NormHistogram, DEFAULT_BINS, DEFAULT_C_MAX};
use crate::rff::FeatureMap;
use crate::{clip_to_norm, Error, Result};

/// Parameters of [`dp_kernel_kmeans`].
#[derive(Debug, Clone, PartialEq)]
pub struct KmeansConfig {
    pub k: usize,
    pub iterations: usize,
    pub sigma_c: f64,
    pub sigma_k: f64,
    /// Clip features to 1 without a private norm selection.
    pub rbf_mode: bool,
    pub c_max: f64,
    pub bins: usize,
}

impl KmeansConfig {
    pub fn new(k: usize, iterations: usize, sigma_k: f64) -> Self {
        Self {
            k,
            iterations,
            sigma_c: 0.0,
            sigma_k,
            rbf_mode: true,
            c_max: DEFAULT_C_MAX,
            bins: DEFAULT_BINS,
        }
    }
}

/// How the first centers are chosen. Neither option reads private records.
#[derive(Debug, Clone, PartialEq)]
pub enum CenterInit {
    /// Centers supplied by the caller, e.g. embedded public records.
    Given(Vec<Vec<f64>>),
    /// Pseudo-random directions of norm `C_s` from a public seed.
    RandomUnit { seed: u64 },
}

/// Output of private kernel k-means.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Clustering {
    pub k: usize,
    pub iterations: usize,
    /// Final assignment of each record against the final noisy centers.
    #[serde(skip)]
    pub assignments: Vec<usize>,
    pub noisy_centers: Vec<Vec<f64>>,
    /// Noisy sizes of the last iteration.
    pub noisy_sizes: Vec<f64>,
    /// Noisy sizes of every iteration.
    pub size_history: Vec<Vec<f64>>,
    pub clip_bound: f64,
}

/// `v / max(1, ||v|| / c_s)` for every feature vector.
pub fn clip_features(features: &[Vec<f64>], c_s: f64) -> Result<Vec<Vec<f64>>> {
    if !(c_s > 0.0) {
        return Err(Error::Domain(format!("clip bound must be positive, got {c_s}")));
    }
    Ok(features.iter().map(|v| clip_to_norm(v, c_s)).collect())
}

/// `k` pseudo-random directions in `R^d` scaled to norm `c_s`.
pub fn random_unit_centers(k: usize, d: usize, c_s: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..k)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = crate::l2_norm(&v).max(f64::MIN_POSITIVE);
            v.into_iter().map(|x| x * c_s / norm).collect()
        })
        .collect()
}

/// Initial centers from public records: k-means++ seeding followed by
/// plain Lloyd iterations. Costs no privacy because `public` is not private.
pub fn public_centers(public: &[Vec<f64>], k: usize, iterations: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if k == 0 || public.len() < k {
        return Err(Error::Domain(format!(
            "need at least k={k} public records, got {}",
            public.len()
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut centers = vec![public[rng.random_range(0..public.len())].clone()];
    let mut nearest: Vec<f64> = public.iter().map(|z| squared_distance(z, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = public.len() - 1;
            for (i, w) in nearest.iter().enumerate() {
                if u < *w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            rng.random_range(0..public.len())
        };
        centers.push(public[next].clone());
        for (n, z) in nearest.iter_mut().zip(public) {
            *n = n.min(squared_distance(z, &centers[centers.len() - 1]));
        }
    }
    for _ in 0..iterations {
        let assignments = assign(public, &centers);
        let (sizes, sums) = cluster_statistics(public, &assignments, k);
        for i in 0..k {
            if sizes[i] > 0 {
                centers[i] = sums[i].iter().map(|s| s / sizes[i] as f64).collect();
            }
        }
    }
    Ok(centers)
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest center for every feature vector; ties go to the
/// lower index.
pub fn assign(features: &[Vec<f64>], centers: &[Vec<f64>]) -> Vec<usize> {
    features
        .par_iter()
        .map(|z| {
            let mut best = (0, f64::INFINITY);
            for (i, c) in centers.iter().enumerate() {
                let dist = squared_distance(z, c);
                if dist < best.1 {
                    best = (i, dist);
                }
            }
            best.0
        })
        .collect()
}

/// Exact per-cluster sizes and feature sums.
pub fn cluster_statistics(features: &[Vec<f64>], assignments: &[usize], k: usize) -> (Vec<usize>, Vec<Vec<f64>>) {
    let d = features.first().map_or(0, Vec::len);
    let mut sizes = vec![0; k];
    let mut sums = vec![vec![0.0; d]; k];
    for (z, &a) in features.iter().zip(assignments) {
        sizes[a] += 1;
        for (s, x) in sums[a].iter_mut().zip(z) {
            *s += x;
        }
    }
    (sizes, sums)
}

/// Sum over clusters of squared distances from members to their center.
pub fn objective(features: &[Vec<f64>], assignments: &[usize], centers: &[Vec<f64>]) -> f64 {
    features
        .iter()
        .zip(assignments)
        .map(|(z, &a)| squared_distance(z, &centers[a]))
        .sum()
}

/// Runs private kernel k-means on `dataset` embedded through `map`.
pub fn dp_kernel_kmeans<R: Rng + ?Sized>(
    dataset: &BinaryDataset,
    map: &FeatureMap,
    cfg: &KmeansConfig,
    init: &CenterInit,
    rng: &mut R,
) -> Result<Clustering> {
    if cfg.k > dataset.len() {
        return Err(Error::Domain(format!(
            "k={} exceeds the number of records {}",
            cfg.k,
            dataset.len()
        )));
    }
    let features = map.embed_all(dataset)?;
    dp_kmeans_on_features(&features, cfg, init, rng)
}

/// The clustering loop on precomputed (unclipped) features.
pub fn dp_kmeans_on_features<R: Rng + ?Sized>(
    features: &[Vec<f64>],
    cfg: &KmeansConfig,
    init: &CenterInit,
    rng: &mut R,
) -> Result<Clustering> {
    if cfg.k == 0 || cfg.iterations == 0 {
        return Err(Error::Domain("k and the iteration count must be at least 1".into()));
    }
    if cfg.k > features.len() {
        return Err(Error::Domain(format!(
            "k={} exceeds the number of records {}",
            cfg.k,
            features.len()
        )));
    }
    if !(cfg.sigma_k >= 0.0 && cfg.sigma_c >= 0.0) {
        return Err(Error::Domain("noise scales must be non-negative".into()));
    }
    let d = features[0].len();

    let clip_bound = if cfg.rbf_mode {
        1.0
    } else {
        NormHistogram::from_vectors(features, cfg.c_max, cfg.bins)?
            .noisy_mode(cfg.sigma_c, rng)?
            .bound
    };
    let clipped = clip_features(features, clip_bound)?;

    let mut centers = match init {
        CenterInit::Given(c) => {
            if c.len() != cfg.k || c.iter().any(|v| v.len() != d) {
                return Err(Error::Domain(format!(
                    "expected {} initial centers of dimension {d}",
                    cfg.k
                )));
            }
            c.clone()
        }
        CenterInit::RandomUnit { seed } => random_unit_centers(cfg.k, d, clip_bound, *seed),
    };

    let size_noise = (cfg.sigma_k > 0.0)
        .then(|| Normal::new(0.0, std::f64::consts::SQRT_2 * cfg.sigma_k).expect("valid normal"));
    let sum_noise = (cfg.sigma_k > 0.0).then(|| {
        Normal::new(0.0, std::f64::consts::SQRT_2 * clip_bound * cfg.sigma_k).expect("valid normal")
    });

    let mut size_history = Vec::with_capacity(cfg.iterations);
    let mut noisy_sizes = vec![0.0; cfg.k];
    for _ in 0..cfg.iterations {
        let assignments = assign(&clipped, &centers);
        let (sizes, sums) = cluster_statistics(&clipped, &assignments, cfg.k);
        for i in 0..cfg.k {
            let n_hat = sizes[i] as f64 + size_noise.map_or(0.0, |n| n.sample(rng));
            let noisy_sum: Vec<f64> = sums[i]
                .iter()
                .map(|s| s + sum_noise.map_or(0.0, |n| n.sample(rng)))
                .collect();
            let divisor = n_hat.max(1.0);
            if sizes[i] == 0 {
                // The noisy sum is pure noise here; perturb the previous center with it.
                for (c, s) in centers[i].iter_mut().zip(&noisy_sum) {
                    *c += s / divisor;
                }
            } else {
                centers[i] = noisy_sum.iter().map(|s| s / divisor).collect();
            }
            noisy_sizes[i] = n_hat;
        }
        size_history.push(noisy_sizes.clone());
    }

    let assignments = assign(&clipped, &centers);
    Ok(Clustering {
        k: cfg.k,
        iterations: cfg.iterations,
        assignments,
        noisy_centers: centers,
        noisy_sizes,
        size_history,
        clip_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;

    /// Plain Lloyd iterations, written independently of the code above.
    fn exact_lloyd(points: &[Vec<f64>], mut centers: Vec<Vec<f64>>, iters: usize) -> Vec<usize> {
        let nearest = |p: &Vec<f64>, cs: &Vec<Vec<f64>>| -> usize {
            let mut best = 0;
            let mut bd = f64::MAX;
            for (j, c) in cs.iter().enumerate() {
                let dd: f64 = p.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum();
                if dd < bd {
                    bd = dd;
                    best = j;
                }
            }
            best
        };
        for _ in 0..iters {
            let labels: Vec<usize> = points.iter().map(|p| nearest(p, &centers)).collect();
            for (j, c) in centers.iter_mut().enumerate() {
                let members: Vec<&Vec<f64>> =
                    points.iter().zip(&labels).filter(|(_, &l)| l == j).map(|(p, _)| p).collect();
                if !members.is_empty() {
                    for (t, v) in c.iter_mut().enumerate() {
                        *v = members.iter().map(|m| m[t]).sum::<f64>() / members.len() as f64;
                    }
                }
            }
        }
        points.iter().map(|p| nearest(p, &centers)).collect()
    }

    fn blobs(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| {
                let center = if i % 2 == 0 { [0.5, 0.1, 0.0] } else { [-0.1, 0.2, 0.6] };
                center.iter().map(|c| c + rng.random_range(-0.05..0.05)).collect()
            })
            .collect()
    }

    #[test]
    fn clipping_examples() {
        let out = clip_features(&[vec![2.0, 0.0], vec![0.3, 0.0], vec![0.6, 0.8]], 1.0).unwrap();
        assert_eq!(out[0], vec![1.0, 0.0]);
        assert_eq!(out[1], vec![0.3, 0.0]);
        assert_eq!(out[2], vec![0.6, 0.8]);
        assert!(clip_features(&[vec![1.0]], 0.0).is_err());
    }

    #[test]
    fn noiseless_matches_exact_lloyd() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let points = blobs(&mut rng, 60);
        let init = vec![points[0].clone(), points[2].clone()];
        let cfg = KmeansConfig::new(2, 10, 0.0);
        let out = dp_kmeans_on_features(&points, &cfg, &CenterInit::Given(init.clone()), &mut rng).unwrap();
        let clipped = clip_features(&points, 1.0).unwrap();
        assert_eq!(out.assignments, exact_lloyd(&clipped, init, 10));
    }

    #[test]
    fn single_cluster_center_is_the_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let points = blobs(&mut rng, 21);
        let cfg = KmeansConfig::new(1, 3, 0.0);
        let out = dp_kmeans_on_features(&points, &cfg, &CenterInit::RandomUnit { seed: 5 }, &mut rng).unwrap();
        let clipped = clip_features(&points, 1.0).unwrap();
        for t in 0..3 {
            let mean = clipped.iter().map(|p| p[t]).sum::<f64>() / clipped.len() as f64;
            assert!((out.noisy_centers[0][t] - mean).abs() < 1e-12);
        }
        assert_eq!(out.noisy_sizes, vec![21.0]);
    }

    #[test]
    fn noiseless_objective_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let points: Vec<Vec<f64>> = (0..80)
            .map(|_| (0..4).map(|_| rng.random_range(-0.4..0.4)).collect())
            .collect();
        let mut previous = f64::INFINITY;
        for iters in 1..8 {
            let cfg = KmeansConfig::new(3, iters, 0.0);
            let out =
                dp_kmeans_on_features(&points, &cfg, &CenterInit::RandomUnit { seed: 1 }, &mut rng).unwrap();
            let value = objective(&points, &out.assignments, &out.noisy_centers);
            assert!(value <= previous + 1e-12, "{value} > {previous}");
            previous = value;
        }
    }

    #[test]
    fn final_assignment_is_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let points = blobs(&mut rng, 50);
        let cfg = KmeansConfig::new(2, 5, 3.0);
        let out = dp_kmeans_on_features(&points, &cfg, &CenterInit::RandomUnit { seed: 2 }, &mut rng).unwrap();
        let clipped = clip_features(&points, out.clip_bound).unwrap();
        assert_eq!(assign(&clipped, &out.noisy_centers), out.assignments);
    }

    #[test]
    fn noisy_sizes_are_unbiased() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let points = blobs(&mut rng, 40);
        let init = CenterInit::Given(vec![points[0].clone(), points[1].clone()]);
        let clipped = clip_features(&points, 1.0).unwrap();
        let centers = match &init {
            CenterInit::Given(c) => c.clone(),
            _ => unreachable!(),
        };
        let true_size = assign(&clipped, &centers).iter().filter(|&&a| a == 0).count() as f64;
        let cfg = KmeansConfig::new(2, 1, 40.0);
        let trials = 2_000;
        let mean = (0..trials)
            .map(|_| dp_kmeans_on_features(&points, &cfg, &init, &mut rng).unwrap().size_history[0][0])
            .sum::<f64>()
            / trials as f64;
        let se = std::f64::consts::SQRT_2 * 40.0 / (trials as f64).sqrt();
        assert!((mean - true_size).abs() < 3.0 * se, "{mean} vs {true_size}");
    }

    #[test]
    fn neighbouring_datasets_move_two_clusters_at_most() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let centers = random_unit_centers(4, 5, 1.0, 3);
        for _ in 0..100 {
            let mut points: Vec<Vec<f64>> = (0..30)
                .map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let c_s = 0.7;
            let before = clip_features(&points, c_s).unwrap();
            let (s0, sum0) = cluster_statistics(&before, &assign(&before, &centers), 4);
            let i = rng.random_range(0..points.len());
            points[i] = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let after = clip_features(&points, c_s).unwrap();
            let (s1, sum1) = cluster_statistics(&after, &assign(&after, &centers), 4);
            let size_changes: Vec<i64> = s0.iter().zip(&s1).map(|(a, b)| *a as i64 - *b as i64).collect();
            assert!(size_changes.iter().filter(|&&c| c != 0).count() <= 2);
            assert!(size_changes.iter().all(|c| c.abs() <= 1));
            for (a, b) in sum0.iter().zip(&sum1) {
                let delta: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                assert!(delta <= 2.0 * c_s + 1e-12);
            }
            let size_l2 = size_changes.iter().map(|c| (*c * *c) as f64).sum::<f64>().sqrt();
            assert!(size_l2 <= std::f64::consts::SQRT_2 + 1e-12);
        }
    }

    #[test]
    fn rbf_mode_consumes_no_norm_noise() {
        let mut rng_a = ChaCha8Rng::seed_from_u64(7);
        let points = blobs(&mut rng_a, 30);
        let cfg = KmeansConfig {
            sigma_c: 5.0,
            ..KmeansConfig::new(2, 2, 1.0)
        };
        let mut r1 = ChaCha8Rng::seed_from_u64(99);
        let mut r2 = ChaCha8Rng::seed_from_u64(99);
        let a = dp_kmeans_on_features(&points, &cfg, &CenterInit::RandomUnit { seed: 0 }, &mut r1).unwrap();
        let no_c = KmeansConfig { sigma_c: 0.0, ..cfg };
        let b = dp_kmeans_on_features(&points, &no_c, &CenterInit::RandomUnit { seed: 0 }, &mut r2).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.clip_bound, 1.0);
    }

    #[test]
    fn empty_cluster_and_tiny_sizes_stay_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let points = blobs(&mut rng, 6);
        let far = vec![vec![100.0, 0.0, 0.0], points[0].clone()];
        let cfg = KmeansConfig::new(2, 5, 10.0);
        let out = dp_kmeans_on_features(&points, &cfg, &CenterInit::Given(far), &mut rng).unwrap();
        assert!(out.noisy_centers.iter().flatten().all(|v| v.is_finite()));
    }

    #[test]
    fn rejects_more_clusters_than_records() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = KmeansConfig::new(3, 1, 1.0);
        let r = dp_kmeans_on_features(&[vec![0.1], vec![0.2]], &cfg, &CenterInit::RandomUnit { seed: 0 }, &mut rng);
        assert!(r.is_err());
    }

    #[test]
    fn public_centers_find_planted_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut public = Vec::new();
        for c in [[1.0, 0.0], [0.0, 1.0], [-1.0, -1.0]] {
            for _ in 0..30 {
                public.push(vec![c[0] + rng.random_range(-0.1..0.1), c[1] + rng.random_range(-0.1..0.1)]);
            }
        }
        let centers = public_centers(&public, 3, 5, 4).unwrap();
        for c in [[1.0, 0.0], [0.0, 1.0], [-1.0, -1.0]] {
            assert!(centers.iter().any(|x| squared_distance(x, &c) < 0.01), "{centers:?}");
        }
        assert!(public_centers(&public[..2], 3, 5, 4).is_err());
    }
}
