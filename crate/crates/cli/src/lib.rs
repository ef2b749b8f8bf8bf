//! `adb`: synthesize data, split it, train boundaries, evaluate, and sweep.
//!
//! Every subcommand writes its fully resolved configuration to `config.json`
//! in its output directory. Passing that file back with `--config` reproduces
//! the same outputs byte for byte.

mod config;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adb_core::boundary::save_curve_csv;
use adb_core::data_io::{
    generate_synthetic, load_dataset, load_model, load_representation, make_known_open_split,
    save_dataset_csv, save_model, save_representation, write_json, DataFormat, EmbeddedDataset,
    EmbeddingRecord, SyntheticConfig, OPEN_LABEL,
};
use adb_core::evaluation::{
    boundary_ratio_sweep, evaluate, labeled_ratio_sweep, run_experiment, run_once, save_with,
    write_boundary_sweep_csv, write_labeled_sweep_csv, write_report_csv, ExperimentReport, Method,
    MetricSummary, DEFAULT_BOUNDARY_RATIOS, DEFAULT_LABELED_RATIOS,
};
use adb_core::inference::{classify_batch, msp_classify_batch, save_predictions_csv};
use adb_core::representation::embed_dataset;
use adb_core::AdbError;
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use crate::config::{ExperimentArgs, ResolvedConfig};

#[derive(Parser)]
#[command(
    name = "adb",
    version,
    about = "Adaptive decision boundaries for open-set classification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic Gaussian-cluster dataset as CSV.
    Synth(SynthArgs),
    /// Split a dataset into known-class train/validation and a test set with open records.
    Split(SplitArgs),
    /// Split, pre-train the representation, and learn decision boundaries.
    Train(TrainArgs),
    /// Evaluate a trained model directory on a dataset.
    Eval(EvalArgs),
    /// Repeat split-train-evaluate over several seeds and aggregate.
    Experiment(ExperimentCmd),
    /// Sensitivity sweeps.
    #[command(subcommand)]
    Sweep(SweepCommand),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    classes: usize,
    #[arg(long)]
    per_class: usize,
    #[arg(long)]
    dim: usize,
    #[arg(long, default_value_t = 5.0)]
    centroid_scale: f64,
    #[arg(long, default_value_t = 1.0)]
    noise_sigma: f64,
    #[arg(long, env = "ADB_SEED", default_value_t = 0)]
    seed: u64,
    /// Output CSV path.
    #[arg(long, short, default_value = "synthetic.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct DataArgs {
    /// Embedding file (CSV or JSONL).
    #[arg(long)]
    data: PathBuf,
    /// Input format; guessed from the extension when omitted.
    #[arg(long)]
    format: Option<DataFormat>,
}

impl DataArgs {
    fn load(&self) -> Result<EmbeddedDataset> {
        let format = self
            .format
            .unwrap_or_else(|| DataFormat::from_path(&self.data));
        Ok(load_dataset(&self.data, format)?)
    }
}

#[derive(Args)]
struct SplitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    exp: ExperimentArgs,
    #[arg(long, short)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    exp: ExperimentArgs,
    #[arg(long, short)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory written by `train` (model.json, optional representation.json).
    #[arg(long)]
    model_dir: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "adb")]
    method: Method,
    /// Confidence threshold for the msp method.
    #[arg(long, default_value_t = adb_core::inference::MSP_THRESHOLD)]
    threshold: f64,
    #[arg(long, short)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ExperimentCmd {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    exp: ExperimentArgs,
    #[arg(long, short)]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum SweepCommand {
    /// Rescale learned radii at test time.
    Boundary(BoundarySweepArgs),
    /// Repeat the experiment at several labeled-data ratios.
    Labeled(LabeledSweepArgs),
}

#[derive(Args)]
struct BoundarySweepArgs {
    #[arg(long)]
    model_dir: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_delimiter = ',')]
    ratios: Option<Vec<f64>>,
    #[arg(long, short)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct LabeledSweepArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    exp: ExperimentArgs,
    #[arg(long, value_delimiter = ',')]
    ratios: Option<Vec<f64>>,
    #[arg(long, short)]
    out_dir: PathBuf,
}

/// Parses `args` (program name first) and runs the subcommand. Usage errors
/// and invalid arguments exit with 2, every other failure with 1.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    // a second call in the same process keeps the first logger
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return ExitCode::from(err.exit_code().clamp(0, 255) as u8);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let usage = err.chain().any(|e| {
                matches!(
                    e.downcast_ref::<AdbError>(),
                    Some(AdbError::InvalidArgument(_))
                )
            });
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Split(a) => split(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Experiment(a) => experiment(a),
        Command::Sweep(SweepCommand::Boundary(a)) => sweep_boundary(a),
        Command::Sweep(SweepCommand::Labeled(a)) => sweep_labeled(a),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn synth(a: SynthArgs) -> Result<()> {
    let cfg = SyntheticConfig {
        n_classes: a.classes,
        per_class: a.per_class,
        dim: a.dim,
        centroid_scale: a.centroid_scale,
        noise_sigma: a.noise_sigma,
        seed: a.seed,
    };
    let data = generate_synthetic(&cfg)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    save_dataset_csv(&data, &a.out)?;
    println!(
        "wrote {} records in {} classes (dim {}) to {}",
        data.len(),
        data.num_classes(),
        data.dim,
        a.out.display()
    );
    Ok(())
}

fn split(a: SplitArgs) -> Result<()> {
    let resolved = ResolvedConfig::resolve(&a.exp)?;
    let data = a.data.load()?;
    let cfg = &resolved.experiment;
    let split = make_known_open_split(&data, &cfg.split_config(cfg.base_seed))?;
    ensure_dir(&a.out_dir)?;
    save_dataset_csv(&split.train, a.out_dir.join("train.csv"))?;
    save_dataset_csv(&split.validation, a.out_dir.join("validation.csv"))?;
    save_dataset_csv(&split.test, a.out_dir.join("test.csv"))?;
    write_json(&split.manifest(), a.out_dir.join("manifest.json"))?;
    resolved.save(&a.out_dir)?;
    println!(
        "known classes: {}; train {} / validation {} / test {} ({} open)",
        split.known_classes.join(","),
        split.train.len(),
        split.validation.len(),
        split.test.len(),
        split.test.open_count()
    );
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let mut resolved = ResolvedConfig::resolve(&a.exp)?;
    resolved.experiment.method = Method::Adb;
    let cfg = &resolved.experiment;
    let data = a.data.load()?;
    let out = run_once(&data, cfg, cfg.base_seed)?;

    ensure_dir(&a.out_dir)?;
    let model = out.adb.as_ref().expect("adb method always yields a model");
    save_model(model, a.out_dir.join("model.json"))?;
    let rep_path = a.out_dir.join("representation.json");
    match &out.representation {
        Some(rep) => save_representation(rep, &rep_path)?,
        None if rep_path.exists() => fs::remove_file(&rep_path)
            .with_context(|| format!("removing stale {}", rep_path.display()))?,
        None => {}
    }
    let mut manifest = out.split.manifest();
    manifest.labeled_ratio = Some(cfg.labeled_ratio);
    manifest.counts.train = out.train.len();
    write_json(&manifest, a.out_dir.join("manifest.json"))?;
    save_curve_csv(&out.curve, a.out_dir.join("curve.csv"))?;
    save_dataset_csv(&out.train, a.out_dir.join("train.csv"))?;
    save_dataset_csv(&out.split.validation, a.out_dir.join("validation.csv"))?;
    save_dataset_csv(&out.split.test, a.out_dir.join("test.csv"))?;
    resolved.save(&a.out_dir)?;
    println!(
        "trained {} classes over {} epochs; mean radius {:.6}",
        model.num_classes(),
        out.curve.last().map_or(0, |p| p.epoch),
        model.mean_radius()
    );
    Ok(())
}

/// Reads a dataset and maps labels unknown to the model onto "open".
fn load_eval_data(args: &DataArgs, labels: &adb_core::LabelMap) -> Result<EmbeddedDataset> {
    let raw = args.load()?;
    let mut relabeled = 0usize;
    let records = raw
        .records
        .into_iter()
        .map(|r| {
            if r.label != OPEN_LABEL && labels.index_of(&r.label).is_none() {
                relabeled += 1;
                EmbeddingRecord::new(OPEN_LABEL, r.vector)
            } else {
                r
            }
        })
        .collect();
    if relabeled > 0 {
        log::info!("{relabeled} records with classes unknown to the model scored as open");
    }
    Ok(EmbeddedDataset::new(records, labels.clone(), raw.dim)?)
}

fn eval(a: EvalArgs) -> Result<()> {
    let model_path = a.model_dir.join("model.json");
    let rep_path = a.model_dir.join("representation.json");
    let (preds, data) = match a.method {
        Method::Adb => {
            let model = load_model(&model_path)?;
            let rep = if rep_path.exists() {
                Some(load_representation(&rep_path)?)
            } else {
                None
            };
            let data = load_eval_data(&a.data, &model.label_map)?;
            let expected = rep.as_ref().map_or(model.dim, |r| r.d_in());
            if data.dim != expected {
                bail!(
                    "dimension mismatch: model expects D={expected} but {} has D={}",
                    a.data.data.display(),
                    data.dim
                );
            }
            let features = match &rep {
                Some(rep) => embed_dataset(rep, &data)?,
                None => data.clone(),
            };
            (classify_batch(&model, &features)?, data)
        }
        Method::Msp => {
            if !rep_path.exists() {
                bail!(
                    "{} not found; the msp method needs a trained representation (train without --skip-rep)",
                    rep_path.display()
                );
            }
            let rep = load_representation(&rep_path)?;
            let data = load_eval_data(&a.data, &rep.label_map)?;
            if data.dim != rep.d_in() {
                bail!(
                    "dimension mismatch: model expects D={} but {} has D={}",
                    rep.d_in(),
                    a.data.data.display(),
                    data.dim
                );
            }
            (msp_classify_batch(&rep, &data, a.threshold)?, data)
        }
    };
    let metrics = evaluate(&preds, &data)?;
    ensure_dir(&a.out_dir)?;
    let golds: Vec<String> = data.records.iter().map(|r| r.label.clone()).collect();
    save_predictions_csv(&preds, &golds, a.out_dir.join("predictions.csv"))?;
    write_json(&metrics, a.out_dir.join("metrics.json"))?;
    let summary = ExperimentReport {
        config: Default::default(),
        seeds: vec![],
        known_classes: vec![],
        train_sizes: vec![],
        runs: vec![metrics.clone()],
        mean: MetricSummary {
            accuracy: metrics.accuracy,
            f1_all: metrics.f1_all,
            f1_known: metrics.f1_known,
            f1_open: metrics.f1_open,
        },
        std: MetricSummary {
            accuracy: 0.0,
            f1_all: 0.0,
            f1_known: 0.0,
            f1_open: 0.0,
        },
    };
    save_with(a.out_dir.join("report.csv"), |w| {
        write_report_csv(&summary, w)
    })?;
    let echo = serde_json::json!({
        "method": a.method,
        "threshold": a.threshold,
    });
    write_json(&echo, a.out_dir.join("config.json"))?;
    println!(
        "accuracy {:.4}  f1_all {:.4}  f1_known {:.4}  f1_open {:.4}",
        metrics.accuracy, metrics.f1_all, metrics.f1_known, metrics.f1_open
    );
    Ok(())
}

fn experiment(a: ExperimentCmd) -> Result<()> {
    let resolved = ResolvedConfig::resolve(&a.exp)?;
    let data = a.data.load()?;
    let report = run_experiment(&data, &resolved.experiment)?;
    ensure_dir(&a.out_dir)?;
    write_json(&report, a.out_dir.join("report.json"))?;
    save_with(a.out_dir.join("report.csv"), |w| {
        write_report_csv(&report, w)
    })?;
    resolved.save(&a.out_dir)?;
    let m = &report.mean;
    println!(
        "{} runs: accuracy {:.4}  f1_all {:.4}  f1_known {:.4}  f1_open {:.4}",
        report.runs.len(),
        m.accuracy,
        m.f1_all,
        m.f1_known,
        m.f1_open
    );
    Ok(())
}

fn sweep_boundary(a: BoundarySweepArgs) -> Result<()> {
    let model = load_model(a.model_dir.join("model.json"))?;
    let rep_path = a.model_dir.join("representation.json");
    let data = load_eval_data(&a.data, &model.label_map)?;
    let features = if rep_path.exists() {
        embed_dataset(&load_representation(&rep_path)?, &data)?
    } else {
        data
    };
    let ratios = a.ratios.unwrap_or_else(|| DEFAULT_BOUNDARY_RATIOS.to_vec());
    let rows = boundary_ratio_sweep(&model, &features, &ratios)?;
    ensure_dir(&a.out_dir)?;
    save_with(a.out_dir.join("sweep.csv"), |w| {
        write_boundary_sweep_csv(&rows, w)
    })?;
    write_json(&rows, a.out_dir.join("sweep.json"))?;
    write_json(
        &serde_json::json!({ "ratios": ratios }),
        a.out_dir.join("config.json"),
    )?;
    println!("wrote {} sweep rows", rows.len());
    Ok(())
}

fn sweep_labeled(a: LabeledSweepArgs) -> Result<()> {
    let mut resolved = ResolvedConfig::resolve(&a.exp)?;
    if let Some(r) = a.ratios {
        resolved.ratios = Some(r);
    }
    let ratios = resolved
        .ratios
        .clone()
        .unwrap_or_else(|| DEFAULT_LABELED_RATIOS.to_vec());
    let data = a.data.load()?;
    let rows = labeled_ratio_sweep(&data, &resolved.experiment, &ratios)?;
    ensure_dir(&a.out_dir)?;
    save_with(a.out_dir.join("sweep.csv"), |w| {
        write_labeled_sweep_csv(&rows, w)
    })?;
    write_json(&rows, a.out_dir.join("sweep.json"))?;
    resolved.save(&a.out_dir)?;
    println!("wrote {} sweep rows", rows.len());
    Ok(())
}
