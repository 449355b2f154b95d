//! Command-line interface: `gen`, `train`, `explain`, `eval` and `bench run`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;
use serde_json::{json, Value};

use crate::bench::{run_sweep, write_reports, Axis, SweepSpec};
use crate::config::{load_dataset, ConfigError, RunConfig};
use crate::datasets::{assign_folds, generate, save_bundle, DatasetBundle, DatasetKind, SynthSpec};
use crate::metrics::{consistency, path_consistency, path_importance, MetricsError};
use crate::model::{ModelError, Profile, TifModel};
use crate::pipeline::{explanation_score, fit_with, split_metrics, traces};
use crate::train::{Split, TrainError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;
pub const EXIT_PREREQUISITE: i32 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(msg: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: msg.into(),
        }
    }

    fn failure(msg: impl fmt::Display) -> Self {
        Self {
            code: EXIT_FAILURE,
            message: msg.to_string(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Parse { .. } | ConfigError::SeedEnv(_) | ConfigError::Fold { .. } | ConfigError::NoDataset => {
                Self::usage(e.to_string())
            }
            ConfigError::Model(ModelError::Config(_)) => Self::usage(e.to_string()),
            other => Self::failure(other),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Divergence { .. } => Self {
                code: EXIT_DIVERGENCE,
                message: e.to_string(),
            },
            other => Self::failure(other),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::NoGroundTruth => Self {
                code: EXIT_PREREQUISITE,
                message: format!("{e}; consistency needs the dataset's ground_truth.json"),
            },
            other => Self::failure(other),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        Self::failure(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::failure(e)
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::failure(e)
    }
}

impl From<crate::datasets::DatasetError> for CliError {
    fn from(e: crate::datasets::DatasetError) -> Self {
        match e {
            crate::datasets::DatasetError::Spec(_) => Self::usage(e.to_string()),
            other => Self::failure(other),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "tif", version, about = "Tree-like interpretable graph classification")]
pub struct Cli {
    /// Worker threads for per-graph parallelism; 1 gives reproducible output.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic benchmark in TU format.
    Gen(GenArgs),
    /// Train on one fold and write checkpoint, curve, config and metrics.
    Train(TrainArgs),
    /// Write tree traces (JSON and DOT) for chosen graphs.
    Explain(ExplainArgs),
    /// Compute prediction and explanation metrics for a checkpoint.
    Eval(EvalArgs),
    /// Ablation sweeps at desk scale.
    Bench {
        #[command(subcommand)]
        command: BenchCommand,
    },
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_parser = parse_kind)]
    pub dataset: DatasetKind,
    /// Number of graphs; defaults to the benchmark's full size.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory; overrides `dataset.path`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub fold: Option<usize>,
    #[arg(long)]
    pub variant: Option<Profile>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub branches: Option<usize>,
    #[arg(long)]
    pub levels: Option<usize>,
    #[arg(long)]
    pub q: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Graph index; repeatable.
    #[arg(long = "index")]
    pub indices: Vec<usize>,
    /// Every graph in the held-out fold.
    #[arg(long)]
    pub all_test: bool,
    #[arg(long, default_value_t = 0)]
    pub fold: usize,
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricName {
    Acc,
    F1,
    ExplAcc,
    Consistency,
    PathConsistency,
    PathImportance,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub fold: Option<usize>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "acc,f1")]
    pub metrics: Vec<MetricName>,
    /// Feature-noise std for path consistency.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Report file; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum BenchCommand {
    Run(BenchArgs),
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_enum)]
    pub sweep: Axis,
    #[arg(long, value_parser = parse_kind, default_value = "graphcycle")]
    pub dataset: DatasetKind,
    #[arg(long, default_value_t = 3)]
    pub seeds: usize,
    #[arg(long, default_value_t = 400)]
    pub graphs: usize,
    #[arg(long, default_value_t = 0.1)]
    pub scale: f64,
    /// Base run config for every cell.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_kind(s: &str) -> Result<DatasetKind, String> {
    s.parse()
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    let threads = cli.threads.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(CliError::failure)?;
    pool.install(|| match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Train(a) => cmd_train(a),
        Command::Explain(a) => cmd_explain(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench {
            command: BenchCommand::Run(a),
        } => cmd_bench(a),
    })
}

fn timestamp() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut f = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

fn seed_or_env(flag: Option<u64>) -> CliResult<u64> {
    let mut c = RunConfig::default();
    Ok(c.resolve_seed(flag)?)
}

pub fn cmd_gen(a: GenArgs) -> CliResult<()> {
    let seed = seed_or_env(a.seed)?;
    let mut spec = SynthSpec::paper(a.dataset);
    spec.seed = seed;
    spec.scale = a.scale;
    if let Some(n) = a.n {
        spec.graphs = n;
    }
    let bundle = assign_folds(generate(&spec)?, a.folds, seed)?;
    fs::create_dir_all(&a.out)?;
    let m = save_bundle(&bundle, &a.out)?;
    info!(
        "wrote {} graphs to {} (avg nodes {:.2}, avg edges {:.2}, checksum {})",
        m.graphs,
        a.out.display(),
        m.avg_nodes,
        m.avg_edges,
        m.checksum
    );
    Ok(())
}

fn split_for(bundle: &DatasetBundle, fold: usize, folds: usize) -> Split {
    Split::from_folds(&bundle.folds, fold, folds)
}

/// Config file plus flag overrides, sized to the dataset.
pub fn resolve_train_config(a: &TrainArgs) -> CliResult<(RunConfig, DatasetBundle)> {
    let mut rc = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let seed = rc.resolve_seed(a.seed)?;
    if let Some(d) = &a.data {
        rc.dataset.path = Some(d.clone());
    }
    if let Some(f) = a.fold {
        rc.dataset.fold = f;
    }
    if let Some(v) = a.variant {
        rc.model.profile = v;
    }
    let m = &mut rc.model;
    m.epochs = a.epochs.unwrap_or(m.epochs);
    m.lr = a.lr.unwrap_or(m.lr);
    m.batch_size = a.batch_size.unwrap_or(m.batch_size);
    m.branches = a.branches.unwrap_or(m.branches);
    m.levels = a.levels.unwrap_or(m.levels);
    m.q = a.q.unwrap_or(m.q);
    if let Some(o) = &a.out {
        rc.out = Some(o.clone());
    }
    let path = rc.dataset.path.clone().ok_or(ConfigError::NoDataset)?;
    let bundle = load_dataset(&path, rc.dataset.folds, seed)?;
    rc.fit_to(&bundle)?;
    Ok((rc, bundle))
}

pub fn cmd_train(a: TrainArgs) -> CliResult<()> {
    let (rc, bundle) = resolve_train_config(&a)?;
    let out = rc.out.clone().ok_or_else(|| CliError::usage("no output directory (--out or `out`)"))?;
    fs::create_dir_all(&out)?;
    fs::write(out.join("config.resolved.toml"), rc.to_toml()?)?;
    let split = split_for(&bundle, rc.dataset.fold, rc.dataset.folds);
    let mut curve = String::from("epoch,train_loss,train_accuracy,val_loss,val_accuracy\n");
    let outcome = fit_with(&rc.model, &bundle, &split, |_, e| {
        curve.push_str(&format!(
            "{},{},{},{},{}\n",
            e.epoch, e.train_loss, e.train_accuracy, e.val_loss, e.val_accuracy
        ));
    });
    fs::write(out.join("curve.csv"), &curve)?;
    let outcome = outcome?;
    outcome.model.save(&out.join("model.ckpt"))?;
    info!("trained in {:.1}s", outcome.report.wall_clock_secs);
    let metrics = json!({
        "timestamp": timestamp(),
        "dataset": bundle.name,
        "fold": rc.dataset.fold,
        "profile": outcome.model.config.profile,
        "seed": rc.model.seed,
        "epochs": outcome.report.epochs.len(),
        "parameters": outcome.model.num_scalars(),
        "initial": { "train": outcome.report.initial_train, "val": outcome.report.initial_val },
        "train": outcome.train,
        "val": outcome.val,
        "test": outcome.test,
    });
    write_json(&out.join("metrics.json"), &metrics)?;
    info!(
        "test accuracy {:.4}, macro-F1 {:.4}; outputs in {}",
        outcome.test.accuracy,
        outcome.test.macro_f1,
        out.display()
    );
    Ok(())
}

/// Fold assignment for a checkpoint's dataset reuses the training seed.
fn load_pair(checkpoint: &Path, data: &Path, folds: usize) -> CliResult<(TifModel, DatasetBundle)> {
    let model = TifModel::load(checkpoint)?;
    let bundle = load_dataset(data, folds, model.config.seed)?;
    let (want, got) = (model.config.feat_dim, bundle.feature_dim());
    if want != got {
        return Err(CliError::failure(format!(
            "checkpoint expects feature width {want}, dataset has {got}"
        )));
    }
    Ok((model, bundle))
}

pub fn cmd_explain(a: ExplainArgs) -> CliResult<()> {
    let (model, bundle) = load_pair(&a.checkpoint, &a.data, a.folds)?;
    let mut indices = a.indices.clone();
    if a.all_test {
        indices.extend(split_for(&bundle, a.fold, a.folds).test);
    }
    if indices.is_empty() {
        return Err(CliError::usage("give --index or --all-test"));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= bundle.graphs.len()) {
        return Err(CliError::usage(format!(
            "graph index {bad} out of range for {} graphs",
            bundle.graphs.len()
        )));
    }
    fs::create_dir_all(&a.out)?;
    let tr = traces(&model, &bundle.graphs, &indices)?;
    for (i, t) in indices.iter().zip(&tr) {
        write_json(&a.out.join(format!("trace_{i}.json")), &t.to_json())?;
        fs::write(a.out.join(format!("trace_{i}.dot")), t.to_dot())?;
    }
    info!("wrote {} traces to {}", tr.len(), a.out.display());
    Ok(())
}

pub fn cmd_eval(a: EvalArgs) -> CliResult<()> {
    let mut rc = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let (model, bundle) = load_pair(&a.checkpoint, &a.data, rc.dataset.folds)?;
    rc.seed = rc.seed.or(Some(model.config.seed));
    let seed = rc.resolve_seed(a.seed)?;
    let fold = a.fold.unwrap_or(rc.dataset.fold);
    if fold >= rc.dataset.folds {
        return Err(ConfigError::Fold {
            fold,
            folds: rc.dataset.folds,
        }
        .into());
    }
    let split = split_for(&bundle, fold, rc.dataset.folds);
    let test: Vec<_> = split.test.iter().map(|&i| &bundle.graphs[i]).collect();
    let noise = a.noise.unwrap_or(rc.metrics.noise);
    let runs = a.runs.unwrap_or(rc.metrics.runs);

    let mut wanted = a.metrics.clone();
    wanted.sort();
    wanted.dedup();
    let mut report: BTreeMap<String, Value> = BTreeMap::new();
    for m in wanted {
        let value = match m {
            MetricName::Acc => json!(split_metrics(&model, &bundle.graphs, &split.test)?.accuracy),
            MetricName::F1 => json!(split_metrics(&model, &bundle.graphs, &split.test)?.macro_f1),
            MetricName::ExplAcc => json!(explanation_score(&model, &bundle, &split, &rc.metrics.surrogate)?),
            MetricName::Consistency => {
                let truth = bundle.ground_truth.as_deref();
                if truth.is_none() {
                    return Err(MetricsError::NoGroundTruth.into());
                }
                let tr = traces(&model, &bundle.graphs, &split.test)?;
                let gt: Vec<_> = split.test.iter().map(|&i| truth.unwrap()[i].clone()).collect();
                json!(consistency(&tr, Some(&gt), &rc.metrics.kernel)?)
            }
            MetricName::PathConsistency => json!(path_consistency(&model, &test, runs, noise, seed)?),
            MetricName::PathImportance => serde_json::to_value(path_importance(&model, &test)?)?,
        };
        let key = serde_json::to_value(m)?.as_str().unwrap_or_default().to_string();
        report.insert(key, value);
    }
    let doc = json!({
        "timestamp": timestamp(),
        "dataset": bundle.name,
        "fold": fold,
        "test_graphs": split.test.len(),
        "noise": noise,
        "runs": runs,
        "metrics": report,
    });
    match &a.out {
        Some(p) => write_json(p, &doc)?,
        None => println!("{}", serde_json::to_string_pretty(&doc)?),
    }
    Ok(())
}

pub fn cmd_bench(a: BenchArgs) -> CliResult<()> {
    let mut base = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let seed0 = base.resolve_seed(None)?;
    if let Some(e) = a.epochs {
        base.model.epochs = e;
    }
    let spec = SweepSpec {
        axis: a.sweep,
        values: a.sweep.default_values(),
        base,
        kind: a.dataset,
        graphs: a.graphs,
        scale: a.scale,
        seeds: (seed0..seed0 + a.seeds as u64).collect(),
    };
    let report = run_sweep(&spec).map_err(CliError::usage)?;
    fs::create_dir_all(&a.out)?;
    let (csv, md) = write_reports(&report, &a.out)?;
    print!("{}", fs::read_to_string(&md)?);
    info!("wrote {} and {}", csv.display(), md.display());
    Ok(())
}
