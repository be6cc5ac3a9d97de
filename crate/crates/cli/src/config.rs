//! Config-file settings and their merge with flags.
//!
//! Precedence is flag, then file, then built-in default.

use std::path::Path;

use serde::Deserialize;

use dpgm::accountant;
use dpgm::data::{Format, DEFAULT_BINARIZE_THRESHOLD};
use dpgm::eval::Semantics;
use dpgm::mixture::{DpgmConfig, DEFAULT_GENERATION_STEPS};

use crate::args::{ClusterParams, CommonArgs, FormatArg, InputArgs, PrivacyArgs, SemanticsArg, SgdParams};
use crate::CliError;

pub const DEFAULT_EPOCHS_TABLE: u64 = 20;
pub const DEFAULT_QUERIES: usize = 1000;

/// Every key a config file may set. Unknown keys are rejected.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub unsafe_no_privacy: Option<bool>,
    pub format: Option<FormatArg>,
    pub threshold: Option<u8>,
    pub sigma_c: Option<f64>,
    pub sigma_k: Option<f64>,
    pub sigma_g: Option<f64>,
    pub delta: Option<f64>,
    pub strict_gaussian: Option<bool>,
    pub rbf_mode: Option<bool>,
    pub lambda_max: Option<u32>,
    pub splits: Option<Vec<f64>>,
    pub q: Option<f64>,
    pub dataset_size: Option<usize>,
    pub k: Option<usize>,
    pub kmeans_iterations: Option<u64>,
    pub features: Option<usize>,
    pub gamma: Option<f64>,
    pub c_max: Option<f64>,
    pub bins: Option<usize>,
    pub batch_size: Option<f64>,
    pub epochs: Option<u64>,
    pub eta: Option<f64>,
    pub hidden: Option<usize>,
    pub gibbs_steps: Option<usize>,
    pub chains: Option<usize>,
    pub weight_std: Option<f64>,
    pub count: Option<usize>,
    pub burn_in: Option<usize>,
    pub queries: Option<usize>,
    pub semantics: Option<SemanticsArg>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }
}

/// Settings shared by every command.
#[derive(Debug, Clone, PartialEq)]
pub struct Common {
    pub seed: u64,
    pub workers: usize,
    pub unsafe_no_privacy: bool,
}

pub fn common(flags: &CommonArgs, file: &FileConfig) -> Common {
    Common {
        seed: flags.seed.or(file.seed).unwrap_or(0),
        workers: flags.workers.or(file.workers).unwrap_or(1),
        unsafe_no_privacy: flags.unsafe_no_privacy || file.unsafe_no_privacy.unwrap_or(false),
    }
}

pub fn input_format(flags: &InputArgs, file: &FileConfig) -> (Format, u8) {
    let format = match flags.format.or(file.format).unwrap_or(FormatArg::Sparse) {
        FormatArg::Sparse => Format::SparseItems,
        FormatArg::Dense => Format::DenseCsv,
    };
    (format, flags.threshold.or(file.threshold).unwrap_or(DEFAULT_BINARIZE_THRESHOLD))
}

pub fn semantics(flag: Option<SemanticsArg>, file: &FileConfig) -> Semantics {
    match flag.or(file.semantics).unwrap_or(SemanticsArg::Any) {
        SemanticsArg::Any => Semantics::Any,
        SemanticsArg::All => Semantics::All,
    }
}

pub fn generation_steps(flag: Option<usize>, file: &FileConfig) -> usize {
    flag.or(file.burn_in).unwrap_or(DEFAULT_GENERATION_STEPS)
}

/// Full training configuration. Flags that only exist for some commands are
/// passed as `None`.
pub fn dpgm_config(
    common: &Common,
    privacy: &PrivacyArgs,
    clustering: &ClusterParams,
    sgd: Option<&SgdParams>,
    file: &FileConfig,
) -> DpgmConfig {
    let d = DpgmConfig::default();
    let empty = SgdParams::default();
    let sgd = sgd.unwrap_or(&empty);
    DpgmConfig {
        seed: common.seed,
        k: clustering.k.or(file.k).unwrap_or(d.k),
        kmeans_iterations: clustering.kmeans_iterations.or(file.kmeans_iterations).unwrap_or(d.kmeans_iterations),
        sigma_c: privacy.sigma_c.or(file.sigma_c).unwrap_or(d.sigma_c),
        sigma_k: privacy.sigma_k.or(file.sigma_k).unwrap_or(d.sigma_k),
        sigma_g: privacy.sigma_g.or(file.sigma_g).unwrap_or(d.sigma_g),
        batch_size: sgd.batch_size.or(file.batch_size).unwrap_or(d.batch_size),
        epochs: sgd.epochs.or(file.epochs).unwrap_or(d.epochs),
        eta: sgd.eta.or(file.eta).unwrap_or(d.eta),
        features: clustering.features.or(file.features).unwrap_or(d.features),
        gamma: clustering.gamma.or(file.gamma),
        c_max: clustering.c_max.or(file.c_max).unwrap_or(d.c_max),
        bins: clustering.bins.or(file.bins).unwrap_or(d.bins),
        hidden: sgd.hidden.or(file.hidden).unwrap_or(d.hidden),
        gibbs_steps: sgd.gibbs_steps.or(file.gibbs_steps).unwrap_or(d.gibbs_steps),
        chains: sgd.chains.or(file.chains),
        weight_std: sgd.weight_std.or(file.weight_std).unwrap_or(d.weight_std),
        delta: privacy.delta.or(file.delta),
        rbf_mode: rbf_mode(privacy, file),
        strict_gaussian: privacy.strict_gaussian || file.strict_gaussian.unwrap_or(false),
        lambda_max: privacy.lambda_max.or(file.lambda_max).unwrap_or(d.lambda_max),
        splits: file.splits.clone().unwrap_or_else(accountant::default_splits),
        unsafe_no_privacy: common.unsafe_no_privacy,
    }
}

pub fn rbf_mode(privacy: &PrivacyArgs, file: &FileConfig) -> bool {
    if privacy.no_rbf_mode {
        false
    } else {
        file.rbf_mode.unwrap_or(true)
    }
}

/// Refuses zero noise scales unless the unsafe option is on.
pub fn check_noise(scales: &[(&str, f64)], unsafe_no_privacy: bool) -> Result<(), CliError> {
    for (name, s) in scales {
        if !(s.is_finite() && *s >= 0.0) {
            return Err(CliError::usage(format!("{name} must be a non-negative number, got {s}")));
        }
        if *s == 0.0 && !unsafe_no_privacy {
            return Err(CliError::usage(format!(
                "refusing {name} = 0: this gives no privacy; pass --unsafe-no-privacy to run anyway"
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(FileConfig::parse("k = 3\nsigma_g = 1.5\n").is_ok());
        assert!(FileConfig::parse("kk = 3\n").is_err());
    }

    #[test]
    fn flag_beats_file_beats_default() {
        let file = FileConfig::parse("k = 7\neta = 0.5\nseed = 11\n").unwrap();
        let flags = CommonArgs::default();
        let c = common(&flags, &file);
        assert_eq!(c.seed, 11);
        let clustering = ClusterParams {
            k: Some(3),
            ..Default::default()
        };
        let cfg = dpgm_config(&c, &PrivacyArgs::default(), &clustering, None, &file);
        assert_eq!(cfg.k, 3);
        assert_eq!(cfg.eta, 0.5);
        assert_eq!(cfg.features, 200);
        assert_eq!(cfg.c_max, 10.0);
        assert_eq!(cfg.bins, 100);
        assert_eq!(cfg.lambda_max, 32);
        assert_eq!(cfg.hidden, 200);
        assert_eq!(cfg.delta, None);
        let cfg = dpgm_config(&c, &PrivacyArgs::default(), &ClusterParams::default(), None, &file);
        assert_eq!(cfg.k, 7);
    }

    #[test]
    fn zero_noise_is_refused_without_the_unsafe_flag() {
        assert!(check_noise(&[("sigma_g", 0.0)], false).is_err());
        assert!(check_noise(&[("sigma_g", 0.0)], true).is_ok());
        assert!(check_noise(&[("sigma_g", 1.0)], false).is_ok());
    }

    #[test]
    fn rbf_mode_defaults_on() {
        let file = FileConfig::default();
        assert!(rbf_mode(&PrivacyArgs::default(), &file));
        let off = PrivacyArgs {
            no_rbf_mode: true,
            ..Default::default()
        };
        assert!(!rbf_mode(&off, &file));
    }
}
