//! The private mixture: cluster, train one RBM per cluster with interleaved
//! private SGD steps, and sample synthetic records from the result.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accountant::{self, PrivacyConfig, PrivacyReport};
use crate::data::{BinaryDataset, BinaryRecord};
use crate::dpnorm::{DEFAULT_BINS, DEFAULT_C_MAX};
use crate::dpsgd::{dp_sgd_step, SgdConfig, SgdState, StepReport};
use crate::kmeans::{assign, clip_features, dp_kernel_kmeans, public_centers, CenterInit, Clustering, KmeansConfig};
use crate::rbm::{PcdTrainer, RbmModel, RbmParameters, DEFAULT_BURN_IN, DEFAULT_HIDDEN, DEFAULT_WEIGHT_STD};
use crate::rff::{FeatureMap, DEFAULT_FEATURES};
use crate::seeds::{SeedTree, Stream};
use crate::{Error, Result};

pub const MODEL_VERSION: u32 = 1;

const WEIGHTS_SOURCE: &str =
    "noisy cluster sizes from the last k-means iteration, clamped at 0; training-time cluster selection used true sizes and is not released";

/// Everything [`train`] needs besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpgmConfig {
    pub seed: u64,
    pub k: usize,
    pub kmeans_iterations: u64,
    pub sigma_c: f64,
    pub sigma_k: f64,
    pub sigma_g: f64,
    /// Target batch size `L`.
    pub batch_size: f64,
    pub epochs: u64,
    pub eta: f64,
    pub features: usize,
    /// Kernel width; `None` means `1 / m`.
    pub gamma: Option<f64>,
    pub c_max: f64,
    pub bins: usize,
    pub hidden: usize,
    pub gibbs_steps: usize,
    /// Persistent chains per model; `None` means `ceil(L)`.
    pub chains: Option<usize>,
    pub weight_std: f64,
    /// `None` means `1 / |D|`.
    pub delta: Option<f64>,
    pub rbf_mode: bool,
    pub strict_gaussian: bool,
    pub lambda_max: u32,
    pub splits: Vec<f64>,
    /// Permit zero noise scales. The result carries no privacy guarantee.
    pub unsafe_no_privacy: bool,
}

impl Default for DpgmConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            k: 2,
            kmeans_iterations: 20,
            sigma_c: 4.0,
            sigma_k: 40.0,
            sigma_g: 1.0,
            batch_size: 100.0,
            epochs: 20,
            eta: 0.01,
            features: DEFAULT_FEATURES,
            gamma: None,
            c_max: DEFAULT_C_MAX,
            bins: DEFAULT_BINS,
            hidden: DEFAULT_HIDDEN,
            gibbs_steps: 1,
            chains: None,
            weight_std: DEFAULT_WEIGHT_STD,
            delta: None,
            rbf_mode: true,
            strict_gaussian: false,
            lambda_max: accountant::DEFAULT_LAMBDA_MAX,
            splits: accountant::default_splits(),
            unsafe_no_privacy: false,
        }
    }
}

impl DpgmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Validation("k must be at least 1".into()));
        }
        if self.kmeans_iterations == 0 {
            return Err(Error::Validation("k-means needs at least one iteration".into()));
        }
        if self.features == 0 || self.hidden == 0 || self.gibbs_steps == 0 || self.bins == 0 {
            return Err(Error::Validation(
                "features, hidden units, gibbs steps and bins must be at least 1".into(),
            ));
        }
        if self.chains == Some(0) {
            return Err(Error::Validation("chains must be at least 1".into()));
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::Validation(format!("gamma must be positive, got {g}")));
            }
        }
        if !(self.weight_std >= 0.0 && self.weight_std.is_finite()) {
            return Err(Error::Validation("weight_std must be non-negative".into()));
        }
        for (name, s) in [
            ("sigma_c", self.sigma_c),
            ("sigma_k", self.sigma_k),
            ("sigma_g", self.sigma_g),
        ] {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::Validation(format!("{name} must be non-negative, got {s}")));
            }
            // sigma_c is unused by clustering in rbf mode but still clips SGD
            if s == 0.0 && !self.unsafe_no_privacy {
                return Err(Error::Validation(format!(
                    "{name} = 0 gives no privacy; pass the unsafe no-privacy option to allow it"
                )));
            }
        }
        self.sgd_config().validate()
    }

    pub fn sgd_config(&self) -> SgdConfig {
        SgdConfig {
            sigma_c: self.sigma_c,
            sigma_g: self.sigma_g,
            batch_size: self.batch_size,
            eta: self.eta,
            c_max: self.c_max,
            bins: self.bins,
        }
    }

    pub fn kmeans_config(&self) -> KmeansConfig {
        KmeansConfig {
            k: self.k,
            iterations: self.kmeans_iterations as usize,
            sigma_c: self.sigma_c,
            sigma_k: self.sigma_k,
            rbf_mode: self.rbf_mode,
            c_max: self.c_max,
            bins: self.bins,
        }
    }

    pub fn gamma_for(&self, m: usize) -> f64 {
        self.gamma.unwrap_or(1.0 / m as f64)
    }

    pub fn delta_for(&self, n: usize) -> f64 {
        self.delta.unwrap_or_else(|| accountant::default_delta(n))
    }

    /// Sampling rate over the whole dataset, `L / |D|`.
    pub fn q_for(&self, n: usize) -> f64 {
        (self.batch_size / n as f64).min(1.0)
    }

    pub fn sgd_steps_for(&self, n: usize) -> u64 {
        accountant::sgd_iterations_for_epochs(self.epochs, self.q_for(n))
    }

    /// Accountant inputs for a dataset of `n` records.
    pub fn privacy_config(&self, n: usize) -> PrivacyConfig {
        let mut p = PrivacyConfig::new(
            self.sigma_c,
            self.sigma_k,
            self.sigma_g,
            self.q_for(n),
            self.kmeans_iterations,
            self.sgd_steps_for(n),
            self.delta_for(n),
        );
        p.rbf_mode = self.rbf_mode;
        p.strict_gaussian = self.strict_gaussian;
        p.lambda_max = self.lambda_max;
        p.splits = self.splits.clone();
        p
    }

    fn chain_count(&self) -> usize {
        self.chains.unwrap_or(self.batch_size.ceil() as usize)
    }
}

/// Privacy parameters that were actually executed, and their cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyRecord {
    pub sigma_c: f64,
    pub sigma_k: f64,
    pub sigma_g: f64,
    pub q: f64,
    pub t_k: u64,
    pub t_s: u64,
    pub delta: f64,
    /// `None` when some noise scale was zero.
    pub epsilon: Option<f64>,
    pub strict_gaussian: bool,
    pub rbf_mode: bool,
}

impl PrivacyRecord {
    fn from_config(p: &PrivacyConfig, report: Option<&PrivacyReport>) -> Self {
        Self {
            sigma_c: p.sigma_c,
            sigma_k: p.sigma_k,
            sigma_g: p.sigma_g,
            q: p.q,
            t_k: p.t_k,
            t_s: p.t_s,
            delta: p.delta,
            epsilon: report.map(|r| r.epsilon),
            strict_gaussian: p.strict_gaussian,
            rbf_mode: p.rbf_mode,
        }
    }
}

/// A trained mixture. Only privately released quantities live here.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureModel {
    /// Size of the training set, public under replace-one neighbours.
    pub n_records: usize,
    pub feature_map: FeatureMap,
    /// Norm bound applied to features before clustering.
    pub clip_bound: f64,
    pub centers: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub models: Vec<RbmModel>,
    pub privacy: PrivacyRecord,
    pub config: Option<DpgmConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    n_records: usize,
    m: usize,
    k: usize,
    gamma: f64,
    d: usize,
    feature_map_seed: u64,
    clip_bound: f64,
    centers: Vec<Vec<f64>>,
    weights: Vec<f64>,
    weights_source: String,
    clusters: Vec<RbmParameters>,
    privacy: PrivacyRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config: Option<DpgmConfig>,
}

impl MixtureModel {
    pub fn k(&self) -> usize {
        self.models.len()
    }

    pub fn m(&self) -> usize {
        self.feature_map.input_dim()
    }

    /// Nearest released center for each record, in clipped feature space.
    pub fn assign(&self, dataset: &BinaryDataset) -> Result<Vec<usize>> {
        let features = clip_features(&self.feature_map.embed_all(dataset)?, self.clip_bound)?;
        Ok(assign(&features, &self.centers))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.clip_bound > 0.0 && self.clip_bound.is_finite()) {
            return Err(Error::Validation("clip bound must be positive".into()));
        }
        let k = self.models.len();
        if k == 0 || self.weights.len() != k || self.centers.len() != k {
            return Err(Error::Validation("model, weight and center counts disagree".into()));
        }
        if self.models.iter().any(|r| r.n_visible() != self.m()) {
            return Err(Error::Validation("sub-models disagree on the record dimension".into()));
        }
        if self.centers.iter().any(|c| c.len() != self.feature_map.output_dim()) {
            return Err(Error::Validation("center dimension differs from the feature dimension".into()));
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Validation("weights must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let spec = self
            .feature_map
            .spec()
            .ok_or_else(|| Error::Validation("only seeded feature maps can be saved".into()))?;
        let file = ModelFile {
            version: MODEL_VERSION,
            n_records: self.n_records,
            m: spec.m,
            k: self.k(),
            gamma: spec.gamma,
            d: spec.d,
            feature_map_seed: spec.seed,
            clip_bound: self.clip_bound,
            centers: self.centers.clone(),
            weights: self.weights.clone(),
            weights_source: WEIGHTS_SOURCE.into(),
            clusters: self.models.iter().map(RbmModel::to_parameters).collect(),
            privacy: self.privacy.clone(),
            config: self.config.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.version != MODEL_VERSION {
            return Err(Error::Validation(format!(
                "unsupported model version {} (expected {MODEL_VERSION})",
                file.version
            )));
        }
        let model = Self {
            n_records: file.n_records,
            feature_map: FeatureMap::from_seed(file.m, file.d, file.gamma, file.feature_map_seed)?,
            clip_bound: file.clip_bound,
            centers: file.centers,
            weights: file.weights,
            models: file
                .clusters
                .into_iter()
                .map(RbmModel::from_parameters)
                .collect::<Result<_>>()?,
            privacy: file.privacy,
            config: file.config,
        };
        if model.k() != file.k {
            return Err(Error::Validation("k does not match the number of clusters".into()));
        }
        model.validate()?;
        Ok(model)
    }
}

/// Picks clusters in proportion to non-negative weights.
#[derive(Debug, Clone)]
pub struct ClusterSelector {
    dist: WeightedIndex<f64>,
}

impl ClusterSelector {
    pub fn new(weights: &[f64]) -> Result<Self> {
        WeightedIndex::new(weights)
            .map(|dist| Self { dist })
            .map_err(|e| Error::Domain(format!("cannot select from weights {weights:?}: {e}")))
    }

    pub fn pick<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.dist.sample(rng)
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepLog {
    pub step: u64,
    pub cluster: usize,
    #[serde(flatten)]
    pub report: StepReport,
}

/// Result of [`train`]: the releasable model plus the clustering, whose
/// assignments are private and stay in memory.
#[derive(Debug, Clone)]
pub struct Trained {
    pub model: MixtureModel,
    pub clustering: Clustering,
    pub privacy_report: Option<PrivacyReport>,
}

/// Lloyd iterations run on public records when seeding k-means from them.
pub const PUBLIC_INIT_ITERATIONS: usize = 10;

/// Trains the mixture. First k-means centers come from `public` records when
/// given, otherwise from pseudo-random directions. `on_step` sees every SGD
/// step.
pub fn train(
    dataset: &BinaryDataset,
    cfg: &DpgmConfig,
    public: Option<&BinaryDataset>,
    on_step: &mut dyn FnMut(&StepLog),
) -> Result<Trained> {
    cfg.validate().map_err(|e| e.in_stage("config"))?;
    let n = dataset.len();
    if n == 0 {
        return Err(Error::Validation("dataset is empty".into()));
    }
    let privacy_cfg = cfg.privacy_config(n);
    let privacy_report = if cfg.sigma_c > 0.0 && cfg.sigma_k > 0.0 && cfg.sigma_g > 0.0 {
        let report = accountant::epsilon_for_delta(&privacy_cfg).map_err(|e| e.in_stage("accountant"))?;
        if !report.epsilon.is_finite() {
            return Err(Error::Numerical("privacy cost is not finite".into()).in_stage("accountant"));
        }
        Some(report)
    } else {
        None
    };

    let seeds = SeedTree::new(cfg.seed);
    let map = FeatureMap::from_seed(dataset.m(), cfg.features, cfg.gamma_for(dataset.m()), seeds.seed(Stream::FeatureMap))
        .map_err(|e| e.in_stage("features"))?;
    let init = match public {
        Some(p) => {
            let features = map.embed_all(p).map_err(|e| e.in_stage("public init"))?;
            CenterInit::Given(
                public_centers(&features, cfg.k, PUBLIC_INIT_ITERATIONS, seeds.seed(Stream::KmeansInit))
                    .map_err(|e| e.in_stage("public init"))?,
            )
        }
        None => CenterInit::RandomUnit {
            seed: seeds.seed(Stream::KmeansInit),
        },
    };
    let clustering = dp_kernel_kmeans(dataset, &map, &cfg.kmeans_config(), &init, &mut seeds.rng(Stream::KmeansNoise))
        .map_err(|e| e.in_stage("kmeans"))?;

    let mut members: Vec<Vec<&BinaryRecord>> = vec![Vec::new(); cfg.k];
    for (r, &a) in dataset.records().iter().zip(&clustering.assignments) {
        members[a].push(r);
    }

    let mut init_rng = seeds.rng(Stream::ModelInit);
    let mut trainers = Vec::with_capacity(cfg.k);
    for i in 0..cfg.k {
        let model = RbmModel::random(dataset.m(), cfg.hidden, cfg.weight_std, &mut init_rng);
        let mut chain_rng = seeds.rng(Stream::Chains);
        chain_rng.set_stream(chain_stream(i));
        trainers.push(PcdTrainer::new(model, cfg.chain_count(), cfg.gibbs_steps, chain_rng).map_err(|e| e.in_stage("init"))?);
    }

    let sgd = cfg.sgd_config();
    let mut states = vec![SgdState::new(&sgd); cfg.k];
    let sizes: Vec<f64> = members.iter().map(|c| c.len() as f64).collect();
    let selector = ClusterSelector::new(&sizes).map_err(|e| e.in_stage("selection"))?;
    let mut select_rng = seeds.rng(Stream::Selection);
    let mut sampling_rng = seeds.rng(Stream::SgdSampling);
    let mut noise_rng = seeds.rng(Stream::SgdNoise);
    for step in 0..privacy_cfg.t_s {
        let s = selector.pick(&mut select_rng);
        let report = dp_sgd_step(&mut trainers[s], &members[s], &sgd, &mut states[s], &mut sampling_rng, &mut noise_rng)
            .map_err(|e| e.in_stage("sgd"))?;
        on_step(&StepLog {
            step,
            cluster: s,
            report,
        });
    }

    let model = MixtureModel {
        n_records: n,
        feature_map: map,
        clip_bound: clustering.clip_bound,
        centers: clustering.noisy_centers.clone(),
        weights: clustering.noisy_sizes.iter().map(|&w| w.max(0.0)).collect(),
        models: trainers.into_iter().map(|t| t.model).collect(),
        privacy: PrivacyRecord::from_config(&privacy_cfg, privacy_report.as_ref()),
        config: Some(cfg.clone()),
    };
    Ok(Trained {
        model,
        clustering,
        privacy_report,
    })
}

fn chain_stream(cluster: usize) -> u64 {
    // keep clear of the stream ids the seed tree hands out
    1 << 32 | cluster as u64
}

/// Draws `count` records. Record `i` depends only on `seed` and `i`, so the
/// output does not depend on the number of worker threads.
pub fn generate(mixture: &MixtureModel, count: usize, gibbs_steps: usize, seed: u64) -> Result<BinaryDataset> {
    if count == 0 {
        return Err(Error::Domain("count must be at least 1".into()));
    }
    if gibbs_steps == 0 {
        return Err(Error::Domain("gibbs_steps must be at least 1".into()));
    }
    if mixture.weights.iter().all(|&w| w <= 0.0) {
        return Err(Error::Domain(
            "every mixture weight is zero, so the model is degenerate; retrain with less clustering noise or a smaller k".into(),
        ));
    }
    let selector = ClusterSelector::new(&mixture.weights)?;
    let records = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let s = selector.pick(&mut rng);
            mixture.models[s].sample(gibbs_steps, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    BinaryDataset::new(mixture.m(), records)
}

/// Default number of Gibbs sweeps per generated record.
pub const DEFAULT_GENERATION_STEPS: usize = DEFAULT_BURN_IN;
