//! Command-line flags. Every tunable is optional here so that a config file
//! value can sit between a flag and the built-in default.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "dpgm", version, about = "Train, sample and evaluate differentially private generative mixtures")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Privacy cost (epsilon) over a range of epochs, as CSV.
    Accountant(AccountantArgs),
    /// Private kernel k-means only; prints a summary and ACC when labels are given.
    Cluster(ClusterArgs),
    /// Train a mixture and write the model file and training log.
    Train(TrainArgs),
    /// Sample synthetic records from a model file.
    Generate(GenerateArgs),
    /// Compare synthetic records to the original on random counting queries.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FormatArg {
    /// `m=<int>` header then item indices per line.
    Sparse,
    /// Headerless CSV of 0-255 values.
    Dense,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SemanticsArg {
    Any,
    All,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML file of settings; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master random seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (1 gives bit-reproducible runs).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Allow zero noise scales. Output carries no privacy guarantee.
    #[arg(long)]
    pub unsafe_no_privacy: bool,
}

#[derive(Debug, Clone, Default, Args)]
pub struct InputArgs {
    /// Private dataset.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    /// Dense cells above this value become 1.
    #[arg(long)]
    pub threshold: Option<u8>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct PrivacyArgs {
    #[arg(long)]
    pub sigma_c: Option<f64>,
    #[arg(long)]
    pub sigma_k: Option<f64>,
    #[arg(long)]
    pub sigma_g: Option<f64>,
    /// Defaults to 1/|D|.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Use the (lambda^2 + lambda) / (2 sigma^2) Gaussian moment.
    #[arg(long)]
    pub strict_gaussian: bool,
    /// Clip features with a private norm selection instead of the fixed RBF bound.
    #[arg(long)]
    pub no_rbf_mode: bool,
    #[arg(long)]
    pub lambda_max: Option<u32>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ClusterParams {
    #[arg(long)]
    pub k: Option<usize>,
    /// k-means iterations (T_K).
    #[arg(long)]
    pub kmeans_iterations: Option<u64>,
    /// Random feature dimension d.
    #[arg(long)]
    pub features: Option<usize>,
    /// Kernel width; defaults to 1/m.
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub c_max: Option<f64>,
    /// Histogram bins for the private norm selection.
    #[arg(long)]
    pub bins: Option<usize>,
    /// Public records used to seed the k-means centers.
    #[arg(long)]
    pub public: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SgdParams {
    /// Target batch size L.
    #[arg(long)]
    pub batch_size: Option<f64>,
    #[arg(long)]
    pub epochs: Option<u64>,
    #[arg(long)]
    pub eta: Option<f64>,
    /// Hidden units per RBM.
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Gibbs sweeps per PCD update.
    #[arg(long)]
    pub gibbs_steps: Option<usize>,
    /// Persistent chains per RBM; defaults to L.
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long)]
    pub weight_std: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct AccountantArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub privacy: PrivacyArgs,
    /// Sampling rate; give this or --dataset-size.
    #[arg(long, conflicts_with = "dataset_size")]
    pub q: Option<f64>,
    /// |D|, with --batch-size giving q = L/|D|.
    #[arg(long)]
    pub dataset_size: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<f64>,
    /// Last row of the table.
    #[arg(long)]
    pub epochs: Option<u64>,
    #[arg(long)]
    pub kmeans_iterations: Option<u64>,
    /// Print JSON instead of CSV.
    #[arg(long)]
    pub json: bool,
    /// Also write the output to this file.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ClusterArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub privacy: PrivacyArgs,
    #[command(flatten)]
    pub params: ClusterParams,
    /// One integer class label per record.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Write the summary JSON here as well as to stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub privacy: PrivacyArgs,
    #[command(flatten)]
    pub clustering: ClusterParams,
    #[command(flatten)]
    pub sgd: SgdParams,
    /// Model file to write.
    #[arg(long)]
    pub output: PathBuf,
    /// JSON-lines training log; defaults to <output>.log.jsonl.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub model: PathBuf,
    /// Records to draw; defaults to the training-set size.
    #[arg(long)]
    pub count: Option<usize>,
    /// Gibbs sweeps per record.
    #[arg(long)]
    pub burn_in: Option<usize>,
    /// Sparse output file.
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Original dataset.
    #[command(flatten)]
    pub input: InputArgs,
    /// Synthetic dataset in sparse format.
    #[arg(long)]
    pub synthetic: PathBuf,
    /// Total counting queries, a multiple of 5.
    #[arg(long)]
    pub queries: Option<usize>,
    #[arg(long, value_enum)]
    pub semantics: Option<SemanticsArg>,
    /// Model file; with --labels, adds clustering accuracy to the report.
    #[arg(long, requires = "labels")]
    pub model: Option<PathBuf>,
    #[arg(long, requires = "model")]
    pub labels: Option<PathBuf>,
    /// Report JSON.
    #[arg(long)]
    pub output: PathBuf,
    /// Per-subset CSV; defaults to the report path with a .csv extension.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}
