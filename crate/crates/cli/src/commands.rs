//! One function per subcommand. Each returns what goes to stdout.

use std::io::Write;
use std::path::{Path, PathBuf};

use log::{debug, info};
use serde::Serialize;
use serde_json::{json, Value};

use dpgm::accountant::{self, PrivacyConfig, StageProfiles};
use dpgm::data::{self, BinaryDataset};
use dpgm::eval::{self, EvalReport};
use dpgm::kmeans::{dp_kernel_kmeans, public_centers, CenterInit, Clustering};
use dpgm::mixture::{self, DpgmConfig, MixtureModel, PUBLIC_INIT_ITERATIONS};
use dpgm::rff::FeatureMap;
use dpgm::seeds::{SeedTree, Stream};

use crate::args::{AccountantArgs, ClusterArgs, Command, EvaluateArgs, GenerateArgs, InputArgs, TrainArgs};
use crate::config::{self, Common, FileConfig};
use crate::output::Outputs;
use crate::CliError;

pub fn run(command: Command) -> Result<String, CliError> {
    match command {
        Command::Accountant(a) => {
            let file = FileConfig::load(a.common.config.as_deref())?;
            let common = config::common(&a.common, &file);
            with_workers(common.workers, || accountant_cmd(&a, &file, &common))
        }
        Command::Cluster(a) => {
            let file = FileConfig::load(a.common.config.as_deref())?;
            let common = config::common(&a.common, &file);
            with_workers(common.workers, || cluster_cmd(&a, &file, &common))
        }
        Command::Train(a) => {
            let file = FileConfig::load(a.common.config.as_deref())?;
            let common = config::common(&a.common, &file);
            with_workers(common.workers, || train_cmd(&a, &file, &common))
        }
        Command::Generate(a) => {
            let file = FileConfig::load(a.common.config.as_deref())?;
            let common = config::common(&a.common, &file);
            with_workers(common.workers, || generate_cmd(&a, &file, &common))
        }
        Command::Evaluate(a) => {
            let file = FileConfig::load(a.common.config.as_deref())?;
            let common = config::common(&a.common, &file);
            with_workers(common.workers, || evaluate_cmd(&a, &file, &common))
        }
    }
}

fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> Result<T, CliError> + Send) -> Result<T, CliError> {
    if workers == 0 {
        return Err(CliError::usage("--workers must be at least 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::usage(format!("cannot start {workers} workers: {e}")))?;
    pool.install(f)
}

fn load_input(input: &InputArgs, file: &FileConfig) -> Result<BinaryDataset, CliError> {
    let (format, threshold) = config::input_format(input, file);
    let dataset = data::load_records(&input.input, format, threshold)
        .map_err(|e| CliError::loading(&input.input.display().to_string(), e))?;
    info!("loaded {} records of dimension {}", dataset.len(), dataset.m());
    Ok(dataset)
}

fn load_public(path: Option<&Path>, m: usize) -> Result<Option<BinaryDataset>, CliError> {
    let Some(path) = path else { return Ok(None) };
    let public = data::load_synthetic(path).map_err(|e| CliError::loading(&path.display().to_string(), e))?;
    if public.m() != m {
        return Err(CliError::data(format!(
            "public records have dimension {} but the data has {m}",
            public.m()
        )));
    }
    Ok(Some(public))
}

fn to_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| CliError::data(e.to_string()))
}

fn accountant_cmd(a: &AccountantArgs, file: &FileConfig, common: &Common) -> Result<String, CliError> {
    let d = DpgmConfig::default();
    let sigma_c = a.privacy.sigma_c.or(file.sigma_c).unwrap_or(d.sigma_c);
    let sigma_k = a.privacy.sigma_k.or(file.sigma_k).unwrap_or(d.sigma_k);
    let sigma_g = a.privacy.sigma_g.or(file.sigma_g).unwrap_or(d.sigma_g);
    config::check_noise(&[("sigma_c", sigma_c), ("sigma_k", sigma_k), ("sigma_g", sigma_g)], common.unsafe_no_privacy)?;
    if sigma_c == 0.0 || sigma_k == 0.0 || sigma_g == 0.0 {
        return Err(CliError::usage("with a zero noise scale the privacy cost is unbounded"));
    }
    let dataset_size = if a.q.is_some() { None } else { a.dataset_size.or(file.dataset_size) };
    let q = match (a.q.or(file.q), dataset_size) {
        (Some(q), _) if a.q.is_some() || dataset_size.is_none() => q,
        (_, Some(n)) => {
            let l = a.batch_size.or(file.batch_size).unwrap_or(d.batch_size);
            (l / n as f64).min(1.0)
        }
        (None, None) => return Err(CliError::usage("give --q or --dataset-size")),
        (Some(q), None) => q,
    };
    let delta = match (a.privacy.delta.or(file.delta), dataset_size) {
        (Some(delta), _) => delta,
        (None, Some(n)) => accountant::default_delta(n),
        (None, None) => return Err(CliError::usage("give --delta or --dataset-size (delta defaults to 1/|D|)")),
    };
    let epochs = a.epochs.or(file.epochs).unwrap_or(config::DEFAULT_EPOCHS_TABLE);
    let mut cfg = PrivacyConfig::new(
        sigma_c,
        sigma_k,
        sigma_g,
        q,
        a.kmeans_iterations.or(file.kmeans_iterations).unwrap_or(d.kmeans_iterations),
        1,
        delta,
    );
    cfg.rbf_mode = config::rbf_mode(&a.privacy, file);
    cfg.strict_gaussian = a.privacy.strict_gaussian || file.strict_gaussian.unwrap_or(false);
    cfg.lambda_max = a.privacy.lambda_max.or(file.lambda_max).unwrap_or(d.lambda_max);
    if let Some(s) = &file.splits {
        cfg.splits = s.clone();
    }
    cfg.validate().map_err(|e| CliError::usage(e.to_string()))?;
    let profiles = StageProfiles::compute(&cfg)?;

    let mut rows = Vec::new();
    for e in 1..=epochs {
        let t_s = accountant::sgd_iterations_for_epochs(e, q);
        let (epsilon, lambda) = profiles.epsilon(t_s, delta);
        if !epsilon.is_finite() {
            return Err(CliError {
                code: crate::EXIT_NUMERICAL,
                message: format!("epsilon is not finite at {e} epochs"),
            });
        }
        rows.push((e, t_s, epsilon, lambda));
    }
    let out = if a.json {
        let table: Vec<Value> = rows
            .iter()
            .map(|&(e, t_s, eps, l)| json!({"epochs": e, "t_s": t_s, "epsilon": eps, "lambda": l}))
            .collect();
        cfg.t_s = rows.last().map_or(0, |r| r.1);
        to_json(&json!({
            "epsilon": rows.last().map(|r| r.2),
            "delta": delta,
            "table": table,
            "config": cfg,
        }))?
    } else {
        let mut s = String::from("epochs,t_s,epsilon,lambda\n");
        for (e, t_s, eps, l) in &rows {
            s.push_str(&format!("{e},{t_s},{eps:.6},{l}\n"));
        }
        s
    };
    if let Some(path) = &a.output {
        let mut outputs = Outputs::new();
        outputs.stage(path, out.as_bytes())?;
        outputs.commit()?;
    }
    Ok(out)
}

#[derive(Serialize)]
struct ClusterSummary<'a> {
    #[serde(flatten)]
    clustering: &'a Clustering,
    sigma_k: f64,
    /// Privacy cost of the clustering stage alone.
    epsilon: Option<f64>,
    delta: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    acc: Option<f64>,
    config: &'a DpgmConfig,
}

fn cluster_cmd(a: &ClusterArgs, file: &FileConfig, common: &Common) -> Result<String, CliError> {
    let cfg = config::dpgm_config(common, &a.privacy, &a.params, None, file);
    config::check_noise(&[("sigma_k", cfg.sigma_k)], common.unsafe_no_privacy)?;
    if !cfg.rbf_mode {
        config::check_noise(&[("sigma_c", cfg.sigma_c)], common.unsafe_no_privacy)?;
    }
    let dataset = load_input(&a.input, file)?;
    let labels = match &a.labels {
        Some(p) => Some(data::load_labels(p).map_err(|e| CliError::loading(&p.display().to_string(), e))?),
        None => None,
    };
    if let Some(l) = &labels {
        if l.len() != dataset.len() {
            return Err(CliError::data(format!("{} labels for {} records", l.len(), dataset.len())));
        }
    }
    let public = load_public(a.params.public.as_deref(), dataset.m())?;
    let seeds = SeedTree::new(cfg.seed);
    let map = FeatureMap::from_seed(dataset.m(), cfg.features, cfg.gamma_for(dataset.m()), seeds.seed(Stream::FeatureMap))?;
    let init = match &public {
        Some(p) => CenterInit::Given(public_centers(
            &map.embed_all(p)?,
            cfg.k,
            PUBLIC_INIT_ITERATIONS,
            seeds.seed(Stream::KmeansInit),
        )?),
        None => CenterInit::RandomUnit {
            seed: seeds.seed(Stream::KmeansInit),
        },
    };
    let clustering = dp_kernel_kmeans(&dataset, &map, &cfg.kmeans_config(), &init, &mut seeds.rng(Stream::KmeansNoise))
        .map_err(|e| e.in_stage("kmeans"))?;
    let delta = cfg.delta_for(dataset.len());
    let epsilon = if cfg.sigma_k > 0.0 && (cfg.rbf_mode || cfg.sigma_c > 0.0) {
        // no SGD steps, so q and sigma_g do not enter
        let mut p = cfg.privacy_config(dataset.len());
        p.t_s = 0;
        p.q = 1.0;
        p.sigma_g = 1.0;
        if p.sigma_c == 0.0 {
            p.sigma_c = 1.0;
        }
        Some(accountant::epsilon_for_delta(&p)?.epsilon)
    } else {
        None
    };
    let acc = match &labels {
        Some(l) => Some(eval::clustering_accuracy(&clustering.assignments, l)?),
        None => None,
    };
    let out = to_json(&ClusterSummary {
        clustering: &clustering,
        sigma_k: cfg.sigma_k,
        epsilon,
        delta,
        acc,
        config: &cfg,
    })?;
    if let Some(path) = &a.output {
        let mut outputs = Outputs::new();
        outputs.stage(path, out.as_bytes())?;
        outputs.commit()?;
    }
    Ok(out)
}

fn default_log_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".log.jsonl");
    PathBuf::from(s)
}

fn json_line(w: &mut impl Write, value: &Value) -> Result<(), CliError> {
    serde_json::to_writer(&mut *w, value).map_err(|e| CliError::data(e.to_string()))?;
    w.write_all(b"\n")?;
    Ok(())
}

fn train_cmd(a: &TrainArgs, file: &FileConfig, common: &Common) -> Result<String, CliError> {
    let cfg = config::dpgm_config(common, &a.privacy, &a.clustering, Some(&a.sgd), file);
    config::check_noise(
        &[("sigma_c", cfg.sigma_c), ("sigma_k", cfg.sigma_k), ("sigma_g", cfg.sigma_g)],
        common.unsafe_no_privacy,
    )?;
    cfg.validate().map_err(|e| CliError::usage(e.to_string()))?;
    let dataset = load_input(&a.input, file)?;
    let public = load_public(a.clustering.public.as_deref(), dataset.m())?;

    let mut outputs = Outputs::new();
    let log_path = a.log.clone().unwrap_or_else(|| default_log_path(&a.output));
    let mut log = std::io::BufWriter::new(outputs.open(&log_path)?);
    json_line(&mut log, &json!({"event": "config", "config": cfg, "n": dataset.len(), "m": dataset.m()}))?;

    let mut log_error = None;
    let trained = mixture::train(&dataset, &cfg, public.as_ref(), &mut |step| {
        if log_error.is_none() {
            let mut v = serde_json::to_value(step).unwrap_or(Value::Null);
            v["event"] = json!("step");
            if let Err(e) = json_line(&mut log, &v) {
                log_error = Some(e);
            }
        }
        if step.step % 1000 == 0 {
            debug!("step {} cluster {} batch {}", step.step, step.cluster, step.report.batch_size);
        }
    })?;
    if let Some(e) = log_error {
        return Err(e);
    }
    for (i, sizes) in trained.clustering.size_history.iter().enumerate() {
        json_line(&mut log, &json!({"event": "kmeans", "iteration": i + 1, "noisy_sizes": sizes}))?;
    }
    json_line(
        &mut log,
        &json!({"event": "done", "clip_bound": trained.clustering.clip_bound, "privacy": trained.model.privacy}),
    )?;
    let log = log.into_inner().map_err(|e| CliError::data(e.to_string()))?;
    outputs.stage(&a.output, trained.model.to_json()?.as_bytes())?;
    outputs.push(log, &log_path);
    outputs.commit()?;

    let p = &trained.model.privacy;
    info!("wrote {}", a.output.display());
    Ok(match p.epsilon {
        Some(eps) => format!("epsilon={eps:.6} delta={} t_k={} t_s={}\n", p.delta, p.t_k, p.t_s),
        None => format!("epsilon=unbounded (no-privacy mode) t_k={} t_s={}\n", p.t_k, p.t_s),
    })
}

fn load_model(path: &Path) -> Result<MixtureModel, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    MixtureModel::from_json(&text).map_err(|e| CliError::loading(&path.display().to_string(), e))
}

fn generate_cmd(a: &GenerateArgs, file: &FileConfig, common: &Common) -> Result<String, CliError> {
    let model = load_model(&a.model)?;
    let count = a.count.or(file.count).unwrap_or(model.n_records);
    if count == 0 {
        return Err(CliError::usage("--count must be at least 1"));
    }
    let steps = config::generation_steps(a.burn_in, file);
    info!("drawing {count} records with {steps} Gibbs sweeps each");
    let synthetic = mixture::generate(&model, count, steps, SeedTree::new(common.seed).seed(Stream::Generation))?;
    let mut outputs = Outputs::new();
    outputs.stage(&a.output, synthetic.to_sparse_string().as_bytes())?;
    outputs.commit()?;
    Ok(format!("wrote {count} records to {}\n", a.output.display()))
}

fn evaluate_cmd(a: &EvaluateArgs, file: &FileConfig, common: &Common) -> Result<String, CliError> {
    let total = a.queries.or(file.queries).unwrap_or(config::DEFAULT_QUERIES);
    if total == 0 || total % eval::SUBSETS != 0 {
        return Err(CliError::usage(format!("--queries must be a positive multiple of {}", eval::SUBSETS)));
    }
    let semantics = config::semantics(a.semantics, file);
    let original = load_input(&a.input, file)?;
    let synthetic = data::load_synthetic(&a.synthetic).map_err(|e| CliError::loading(&a.synthetic.display().to_string(), e))?;
    let mut rng = SeedTree::new(common.seed).rng(Stream::Workload);
    let workload = eval::generate_workload(original.m(), original.max_l1().max(eval::SUBSETS), total, semantics, &mut rng)?;
    let mut report: EvalReport = eval::evaluate(&original, &synthetic, &workload)?;
    if let (Some(model_path), Some(labels_path)) = (&a.model, &a.labels) {
        let model = load_model(model_path)?;
        let labels = data::load_labels(labels_path).map_err(|e| CliError::loading(&labels_path.display().to_string(), e))?;
        report.acc = Some(eval::clustering_accuracy(&model.assign(&original)?, &labels)?);
    }
    let mut value = serde_json::to_value(&report).map_err(|e| CliError::data(e.to_string()))?;
    value["config"] = json!({"seed": common.seed, "queries": total, "semantics": semantics});
    let json_text = to_json(&value)?;
    let csv_path = a.csv.clone().unwrap_or_else(|| a.output.with_extension("csv"));
    let mut outputs = Outputs::new();
    outputs.stage(&a.output, json_text.as_bytes())?;
    outputs.stage(&csv_path, report.to_csv().as_bytes())?;
    outputs.commit()?;
    Ok(report.to_csv())
}
