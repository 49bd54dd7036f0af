//! Command-line front end.
//!
//! Flags override values from a JSON `--config` file (`"config_version": 1`),
//! which override built-in defaults. The effective values are echoed into
//! every summary the command writes.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 training
//! failure, 4 shape mismatch, 5 majority of trials failed.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::bench::{self, BenchData, Method};
use crate::data::{SplitKind, TargetTable};
use crate::error::{Error, Result};
use crate::gp::KernelKind;
use crate::io;
use crate::pooling::{self, MaskVariant, SPARSITY_THRESHOLD};
use crate::snapshot;
use crate::synth::{self, NoiseLevel, SyntheticMeta, SyntheticSpec, TargetModel};
use crate::train::{self, StepRule, TrainConfig};

pub const CONFIG_VERSION: u32 = 1;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_TRAINING: i32 = 3;
pub const EXIT_SHAPE: i32 = 4;
pub const EXIT_TRIALS: i32 = 5;

pub const TENSOR_FILE: &str = "embeddings.spgp";
pub const TARGETS_FILE: &str = "targets.csv";
pub const META_FILE: &str = "meta.json";
pub const MODEL_FILE: &str = "model.spgm";
pub const TRACE_FILE: &str = "trace.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const TRIALS_FILE: &str = "trials.csv";
pub const SWEEP_FILE: &str = "sweep.csv";

#[derive(Debug, Parser)]
#[command(name = "spgp", version, about = "Masked-pooling Gaussian-process regression on embedding tensors")]
pub struct Cli {
    /// JSON config file; flags take precedence over its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Worker thread cap for restarts and trials.
    #[arg(long, global = true, env = "SPGP_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a planted-mask synthetic dataset.
    Synth(SynthArgs),
    /// Build a train/validation/test split.
    Split(SplitArgs),
    /// Fit a model.
    Train(TrainArgs),
    /// Predict with a saved model.
    Predict(PredictArgs),
    /// Repeated paired trials of several pooling methods.
    Eval(EvalArgs),
    /// Sweep the Half-Cauchy prior scale.
    Sweep(SweepArgs),
    /// Report the learned mask and its zero entries.
    MaskReport(MaskReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Seed of the target function and embedding alphabet (defaults to --seed).
    #[arg(long)]
    pub function_seed: Option<u64>,
    /// Noise sd as a fraction of the noise-free target sd.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Noise sd in target units; overrides --noise.
    #[arg(long)]
    pub noise_sd: Option<f64>,
    #[arg(long)]
    pub max_mut: Option<u32>,
    #[arg(long)]
    pub single_fraction: Option<f64>,
    #[arg(long)]
    pub test_size: Option<usize>,
    /// cosine | additive
    #[arg(long)]
    pub target_model: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct FitArgs {
    /// mean | softmax | sigmoid | prior
    #[arg(long)]
    pub variant: Option<String>,
    /// matern32 | matern52
    #[arg(long)]
    pub kernel: Option<String>,
    #[arg(long)]
    pub prior_sigma: Option<f64>,
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// fixed | adaptive
    #[arg(long)]
    pub step_rule: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub targets: Option<PathBuf>,
    /// one-mut-shuffle | uniform-shuffle | holdout
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub val_size: Option<usize>,
    /// Synthetic metadata supplying the fixed test set.
    #[arg(long)]
    pub meta: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub tensor: Option<PathBuf>,
    #[arg(long)]
    pub targets: Option<PathBuf>,
    /// Split file; trains on its `train` indices. All rows otherwise.
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[command(flatten)]
    pub fit: FitArgs,
    /// Train on single mutants only.
    #[arg(long)]
    pub restricted_1mut: bool,
    /// Write the objective trace CSV.
    #[arg(long)]
    pub trace: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub tensor: Option<PathBuf>,
    #[arg(long)]
    pub targets: Option<PathBuf>,
    /// Also write the full posterior covariance.
    #[arg(long)]
    pub full_cov: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub tensor: Option<PathBuf>,
    #[arg(long)]
    pub targets: Option<PathBuf>,
    /// Synthetic metadata: fixed test set and planted support.
    #[arg(long)]
    pub meta: Option<PathBuf>,
    /// Split file whose `test` indices form the fixed test set.
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// one-mut-shuffle | uniform-shuffle | holdout
    #[arg(long)]
    pub split_kind: Option<String>,
    #[arg(long)]
    pub val_size: Option<usize>,
    #[arg(long)]
    pub trials: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    #[command(flatten)]
    pub fit: FitArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_delimiter = ',')]
    pub sigmas: Option<Vec<f64>>,
    #[command(flatten)]
    pub fit: FitArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MaskReportArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Values accepted from a JSON config file.
#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub config_version: Option<u32>,
    pub n: Option<usize>,
    pub p: Option<usize>,
    pub m: Option<usize>,
    pub k: Option<usize>,
    pub seed: Option<u64>,
    pub function_seed: Option<u64>,
    pub noise: Option<f64>,
    pub noise_sd: Option<f64>,
    pub max_mut: Option<u32>,
    pub single_fraction: Option<f64>,
    pub test_size: Option<usize>,
    pub target_model: Option<String>,
    pub tensor: Option<PathBuf>,
    pub targets: Option<PathBuf>,
    pub split: Option<PathBuf>,
    pub meta: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub kind: Option<String>,
    pub split_kind: Option<String>,
    pub val_size: Option<usize>,
    pub variant: Option<String>,
    pub kernel: Option<String>,
    pub prior_sigma: Option<f64>,
    pub restarts: Option<usize>,
    pub max_iters: Option<usize>,
    pub tol: Option<f64>,
    pub lr: Option<f64>,
    pub step_rule: Option<String>,
    pub restricted_1mut: Option<bool>,
    pub trace: Option<bool>,
    pub full_cov: Option<bool>,
    pub methods: Option<Vec<String>>,
    pub trials: Option<usize>,
    pub sigmas: Option<Vec<f64>>,
    pub threshold: Option<f64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: FileConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("config file: {e}")))?;
        match cfg.config_version {
            Some(CONFIG_VERSION) => Ok(cfg),
            Some(v) => Err(Error::Config(format!(
                "config_version {v} unsupported (expected {CONFIG_VERSION})"
            ))),
            None => Err(Error::Config("config file lacks config_version".into())),
        }
    }
}

fn required<T>(value: Option<T>, name: &str) -> Result<T> {
    value.ok_or_else(|| Error::Config(format!("missing required --{name}")))
}

fn parse<T: std::str::FromStr<Err = Error>>(value: Option<String>, default: T) -> Result<T> {
    value.map(|s| s.parse()).transpose().map(|v| v.unwrap_or(default))
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Shape(_) => EXIT_SHAPE,
        Error::Conditioning { .. } | Error::Training(_) | Error::DegenerateMask(_) => EXIT_TRAINING,
        _ => EXIT_CONFIG,
    }
}

pub fn run() -> i32 {
    run_from(std::env::args_os())
}

pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn execute(cli: Cli) -> Result<i32> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    if let Some(threads) = cli.threads.or(file.threads) {
        // A global pool can only be installed once per process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    match cli.command {
        Command::Synth(a) => cmd_synth(a, &file),
        Command::Split(a) => cmd_split(a, &file),
        Command::Train(a) => cmd_train(a, &file),
        Command::Predict(a) => cmd_predict(a, &file),
        Command::Eval(a) => cmd_eval(a, &file),
        Command::Sweep(a) => cmd_sweep(a, &file),
        Command::MaskReport(a) => cmd_mask_report(a, &file),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("json serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_meta(path: &Path) -> Result<SyntheticMeta> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("metadata json: {e}")))
}

pub fn cmd_synth(a: SynthArgs, f: &FileConfig) -> Result<i32> {
    let seed = a.seed.or(f.seed).unwrap_or(0);
    let defaults = SyntheticSpec::default();
    let noise = match a.noise_sd.or(f.noise_sd) {
        Some(sd) => NoiseLevel::Absolute(sd),
        None => NoiseLevel::Relative(a.noise.or(f.noise).unwrap_or(0.1)),
    };
    let target_model = match a.target_model.or(f.target_model.clone()).as_deref() {
        None | Some("cosine") => TargetModel::CosineFeatures,
        Some("additive") => TargetModel::Additive,
        Some(other) => return Err(Error::Config(format!("unknown target model {other:?}"))),
    };
    let n = a.n.or(f.n).unwrap_or(defaults.n_sequences);
    let spec = SyntheticSpec {
        n_sequences: n,
        n_positions: a.p.or(f.p).unwrap_or(defaults.n_positions),
        n_dims: a.m.or(f.m).unwrap_or(defaults.n_dims),
        support_size: a.k.or(f.k).unwrap_or(defaults.support_size),
        function_seed: a.function_seed.or(f.function_seed).unwrap_or(seed),
        noise,
        target_model,
        max_mutations: a.max_mut.or(f.max_mut).unwrap_or(defaults.max_mutations),
        single_fraction: a.single_fraction.or(f.single_fraction).unwrap_or(defaults.single_fraction),
        test_size: a.test_size.or(f.test_size).unwrap_or(n / 5),
        ..defaults
    };
    let out = a.out.or(f.out.clone()).unwrap_or_else(|| PathBuf::from("."));
    let data = synth::generate(&spec, seed)?;
    ensure_dir(&out)?;
    io::write_tensor(&data.tensor, out.join(TENSOR_FILE))?;
    io::write_targets(&data.targets, out.join(TARGETS_FILE))?;
    write_json(&out.join(META_FILE), &data.meta)?;
    println!(
        "wrote {} sequences ({}x{}), support {:?} to {}",
        n,
        spec.n_positions,
        spec.n_dims,
        data.meta.support,
        out.display()
    );
    Ok(EXIT_OK)
}

pub fn cmd_split(a: SplitArgs, f: &FileConfig) -> Result<i32> {
    let targets = io::read_targets(required(a.targets.or(f.targets.clone()), "targets")?)?;
    let kind: SplitKind = parse(a.kind.or(f.kind.clone()), SplitKind::UniformShuffle)?;
    let seed = a.seed.or(f.seed).unwrap_or(0);
    let test = match a.meta.or(f.meta.clone()) {
        Some(path) => read_meta(&path)?.test_indices,
        None => Vec::new(),
    };
    let split = bench::make_split(&targets, kind, seed, a.val_size.or(f.val_size), &test)?;
    let out = a.out.or(f.out.clone()).unwrap_or_else(|| PathBuf::from("split.json"));
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    io::write_split(&split, &out)?;
    println!(
        "{} split: {} train, {} validation, {} test",
        kind,
        split.train_indices.len(),
        split.validation_indices.len(),
        split.test_indices.len()
    );
    Ok(EXIT_OK)
}

fn train_config(a: &FitArgs, f: &FileConfig, variant_default: MaskVariant) -> Result<TrainConfig> {
    let d = TrainConfig::default();
    let config = TrainConfig {
        variant: parse(a.variant.clone().or(f.variant.clone()), variant_default)?,
        kernel: parse(a.kernel.clone().or(f.kernel.clone()), KernelKind::default())?,
        prior_scale: a.prior_sigma.or(f.prior_sigma).unwrap_or(d.prior_scale),
        max_iters: a.max_iters.or(f.max_iters).unwrap_or(d.max_iters),
        restarts: a.restarts.or(f.restarts).unwrap_or(d.restarts),
        step_rule: match a.step_rule.clone().or(f.step_rule.clone()).as_deref() {
            None | Some("adaptive") => StepRule::Adaptive,
            Some("fixed") => StepRule::Fixed,
            Some(other) => return Err(Error::Config(format!("unknown step rule {other:?}"))),
        },
        learning_rate: a.lr.or(f.lr).unwrap_or(d.learning_rate),
        tolerance: a.tol.or(f.tol).unwrap_or(d.tolerance),
        seed: a.seed.or(f.seed).unwrap_or(0),
        ..d
    };
    config.validate()?;
    Ok(config)
}

fn config_json(c: &TrainConfig) -> serde_json::Value {
    json!({
        "variant": c.variant,
        "kernel": c.kernel,
        "prior_sigma": c.prior_scale,
        "max_iters": c.max_iters,
        "restarts": c.restarts,
        "step_rule": c.step_rule,
        "lr": c.learning_rate,
        "tol": c.tolerance,
        "seed": c.seed,
        "standardize_targets": c.standardize,
    })
}

pub fn cmd_train(a: TrainArgs, f: &FileConfig) -> Result<i32> {
    let tensor_path = required(a.tensor.or(f.tensor.clone()), "tensor")?;
    let targets_path = required(a.targets.or(f.targets.clone()), "targets")?;
    let tensor = io::read_tensor(&tensor_path)?;
    let targets = io::read_targets(&targets_path)?;
    targets.check_paired(&tensor)?;
    let config = train_config(&a.fit, f, MaskVariant::Mean)?;
    let restricted = a.restricted_1mut || f.restricted_1mut.unwrap_or(false);
    let write_trace = a.trace || f.trace.unwrap_or(false);
    let split_path = a.split.or(f.split.clone());

    let train_idx: Vec<usize> = match &split_path {
        Some(path) => {
            let split = io::read_split(path)?;
            split.validate(targets.len())?;
            split.train_indices
        }
        None => (0..targets.len()).collect(),
    };
    let t = tensor.select(&train_idx)?;
    let tt = targets.select(&train_idx)?;
    let model = if restricted {
        train::fit_restricted(&t, &tt.values, &tt.mutation_counts, &config)?
    } else {
        train::fit(&t, &tt.values, &config)?
    };

    let out = a.out.or(f.out.clone()).unwrap_or_else(|| PathBuf::from("."));
    ensure_dir(&out)?;
    let bytes = snapshot::encode_model(&model);
    fs::write(out.join(MODEL_FILE), &bytes).map_err(|e| Error::io(out.join(MODEL_FILE), e))?;
    if write_trace {
        write_text(&out.join(TRACE_FILE), &train::format_trace(&model.trace))?;
    }
    let sparsity = pooling::sparsity_report(&model.head, model.n_positions, SPARSITY_THRESHOLD)?;
    let hp = model.hypers();
    let mut effective = config_json(&config);
    effective["tensor"] = json!(tensor_path);
    effective["targets"] = json!(targets_path);
    effective["split"] = json!(split_path);
    effective["restricted_1mut"] = json!(restricted);
    let summary = json!({
        "config": effective,
        "n_train": model.n_train(),
        "restricted": model.restricted,
        "final_objective": model.objective,
        "final_mll": model.posterior.log_marginal_likelihood(),
        "iterations": model.trace.last().map(|r| r.iter).unwrap_or(0),
        "hypers": {
            "log_sigma_f2": hp.log_sigma_f2,
            "log_sigma_l": hp.log_sigma_l,
            "log_sigma_eps2": hp.log_sigma_eps2,
            "sigma_f2": hp.sigma_f2(),
            "sigma_l": hp.sigma_l(),
            "sigma_eps2": hp.sigma_eps2(),
        },
        "target_standardization": { "mean": model.y_mean, "scale": model.y_scale },
        "jitter_used": model.jitter_used(),
        "sparsity": sparsity,
        "snapshot_crc32": snapshot::snapshot_checksum(&bytes),
    });
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    println!(
        "trained {} model on {} sequences, objective {:.6}",
        config.variant,
        model.n_train(),
        model.objective
    );
    Ok(EXIT_OK)
}

pub fn cmd_predict(a: PredictArgs, f: &FileConfig) -> Result<i32> {
    let model = snapshot::load_model(required(a.model.or(f.model.clone()), "model")?)?;
    let tensor = io::read_tensor(required(a.tensor.or(f.tensor.clone()), "tensor")?)?;
    let targets: Option<TargetTable> = a
        .targets
        .or(f.targets.clone())
        .map(io::read_targets)
        .transpose()?;
    if let Some(t) = &targets {
        t.check_paired(&tensor)?;
    }
    let full_cov = a.full_cov || f.full_cov.unwrap_or(false);
    let out = a.out.or(f.out.clone()).unwrap_or_else(|| PathBuf::from("predictions.csv"));
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }

    let (dist, cov) = if full_cov {
        let (d, c) = model.predict_full(&tensor)?;
        (d, Some(c))
    } else {
        (model.predict(&tensor)?, None)
    };
    let ids: Vec<String> = match &targets {
        Some(t) => t.ids.clone(),
        None => (0..tensor.n_sequences()).map(|i| i.to_string()).collect(),
    };
    let observed = targets.as_ref().map(|t| t.values.as_slice());
    write_text(&out, &bench::format_predictions(&ids, observed, &dist))?;
    if let Some(cov) = cov {
        let mut text = String::new();
        for i in 0..cov.nrows() {
            let row: Vec<String> = (0..cov.ncols()).map(|j| format!("{:?}", cov[(i, j)])).collect();
            text.push_str(&row.join(","));
            text.push('\n');
        }
        write_text(&out.with_extension("cov.csv"), &text)?;
    }
    if let Some(y) = observed {
        println!("MAE {:.6}", bench::mean_absolute_error(&dist.mean, y));
    }
    Ok(EXIT_OK)
}

struct LoadedData {
    data: BenchData,
    kind: SplitKind,
    val_size: Option<usize>,
    trials: usize,
    echo: serde_json::Value,
}

fn load_bench_data(a: DataArgs, f: &FileConfig) -> Result<LoadedData> {
    let tensor_path = required(a.tensor.or(f.tensor.clone()), "tensor")?;
    let targets_path = required(a.targets.or(f.targets.clone()), "targets")?;
    let tensor = io::read_tensor(&tensor_path)?;
    let targets = io::read_targets(&targets_path)?;
    let meta_path = a.meta.or(f.meta.clone());
    let split_path = a.split.or(f.split.clone());
    let (test, support) = match (&meta_path, &split_path) {
        (Some(m), _) => {
            let meta = read_meta(m)?;
            (meta.test_indices, Some(meta.support))
        }
        (None, Some(s)) => (io::read_split(s)?.test_indices, None),
        (None, None) => (Vec::new(), None),
    };
    let mut data = BenchData::new(tensor, targets, test)?;
    if let Some(s) = support {
        data = data.with_support(s);
    }
    let kind = parse(a.split_kind.or(f.split_kind.clone()), SplitKind::UniformShuffle)?;
    let val_size = a.val_size.or(f.val_size);
    let trials = a.trials.or(f.trials).unwrap_or(bench::DEFAULT_TRIALS);
    let echo = json!({
        "tensor": tensor_path,
        "targets": targets_path,
        "meta": meta_path,
        "split": split_path,
        "split_kind": kind,
        "val_size": val_size.unwrap_or_else(|| kind.default_validation_size()),
        "trials": trials,
    });
    Ok(LoadedData {
        data,
        kind,
        val_size,
        trials,
        echo,
    })
}

fn merge(mut a: serde_json::Value, b: serde_json::Value) -> serde_json::Value {
    if let (Some(a), serde_json::Value::Object(b)) = (a.as_object_mut(), b) {
        a.extend(b);
    }
    a
}

pub fn cmd_eval(a: EvalArgs, f: &FileConfig) -> Result<i32> {
    let loaded = load_bench_data(a.data, f)?;
    let config = train_config(&a.fit, f, MaskVariant::Mean)?;
    let names = a
        .methods
        .or(f.methods.clone())
        .unwrap_or_else(|| MaskVariant::ALL.iter().map(|v| v.to_string()).collect());
    let methods: Vec<Method> = names
        .iter()
        .map(|n| Ok(Method::new(n.trim().parse()?, config.prior_scale)))
        .collect::<Result<_>>()?;
    let seed = config.seed;
    let report = bench::run_trials(
        &loaded.data,
        loaded.kind,
        &methods,
        loaded.trials,
        seed,
        loaded.val_size,
        &config,
    )?;

    let out = a.out.or(f.out.clone()).unwrap_or_else(|| PathBuf::from("."));
    ensure_dir(&out)?;
    write_text(&out.join(TRIALS_FILE), &report.to_csv())?;
    let mut effective = merge(config_json(&config), loaded.echo);
    effective["methods"] = json!(names);
    let summary = json!({
        "config": effective,
        "split_kind": report.split_kind,
        "n_trials": report.n_trials,
        "effective_trials": report.effective_trials,
        "base_seed": report.base_seed,
        "summaries": report.summaries,
        "failures": report.failures,
        "notes": report.notes,
    });
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    for s in &report.summaries {
        let p = s
            .vs_baseline
            .map(|t| format!("p={:.4}", t.p_value))
            .unwrap_or_else(|| "baseline".into());
        println!("{:8} {:.4} ± {:.4} ({p})", s.method, s.mean_mae, s.std_mae);
    }
    Ok(if report.succeeded_majority() { EXIT_OK } else { EXIT_TRIALS })
}

pub fn cmd_sweep(a: SweepArgs, f: &FileConfig) -> Result<i32> {
    let loaded = load_bench_data(a.data, f)?;
    let config = train_config(&a.fit, f, MaskVariant::Prior)?;
    let sigmas = required(a.sigmas.or(f.sigmas.clone()), "sigmas")?;
    let sweep = bench::sweep_prior(
        &loaded.data,
        loaded.kind,
        &sigmas,
        loaded.trials,
        config.seed,
        loaded.val_size,
        &config,
    )?;
    for w in &sweep.warnings {
        eprintln!("warning: {w}");
    }
    let out = a.out.or(f.out.clone()).unwrap_or_else(|| PathBuf::from("."));
    ensure_dir(&out)?;
    write_text(&out.join(SWEEP_FILE), &sweep.to_csv())?;
    let mut effective = merge(config_json(&config), loaded.echo);
    effective["sigmas"] = json!(sigmas);
    write_json(
        &out.join(SUMMARY_FILE),
        &json!({ "config": effective, "sweep": sweep }),
    )?;
    println!("best sigma {}", sweep.best_sigma);
    let failed = sweep.rows.iter().filter(|r| 2 * r.n_trials < loaded.trials).count();
    Ok(if 2 * failed > sweep.rows.len() { EXIT_TRIALS } else { EXIT_OK })
}

pub fn cmd_mask_report(a: MaskReportArgs, f: &FileConfig) -> Result<i32> {
    let model = snapshot::load_model(required(a.model.or(f.model.clone()), "model")?)?;
    let threshold = a.threshold.or(f.threshold).unwrap_or(SPARSITY_THRESHOLD);
    let report = pooling::sparsity_report(&model.head, model.n_positions, threshold)?;
    let value = json!({
        "variant": model.head.variant(),
        "prior_sigma": model.head.prior_scale(),
        "n_positions": model.n_positions,
        "zero_count": report.zero_count,
        "threshold": report.threshold,
        "weights": report.weights,
    });
    match a.out.or(f.out.clone()) {
        Some(path) => write_json(&path, &value)?,
        None => println!("{}", serde_json::to_string_pretty(&value).expect("json serializes")),
    }
    Ok(EXIT_OK)
}
