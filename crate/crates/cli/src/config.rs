use std::path::{Path, PathBuf};

use adb_core::data_io::write_json;
use adb_core::evaluation::{ExperimentConfig, Method};
use anyhow::{Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

/// Flags shared by every subcommand that trains. Each one, when given,
/// overrides the value from `--config`.
#[derive(Args, Debug, Default)]
pub struct ExperimentArgs {
    /// JSON config (same shape as the `config.json` every run writes).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub known_ratio: Option<f64>,
    #[arg(long)]
    pub labeled_ratio: Option<f64>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub method: Option<Method>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Learn boundaries directly on the input vectors (precomputed embeddings).
    #[arg(long)]
    pub skip_rep: bool,
    /// Keep the known/open split fixed at the base seed across runs.
    #[arg(long)]
    pub fixed_split: bool,
    #[arg(long)]
    pub parallel: Option<usize>,

    /// Boundary learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,

    #[arg(long)]
    pub rep_lr: Option<f64>,
    #[arg(long)]
    pub rep_batch_size: Option<usize>,
    #[arg(long)]
    pub rep_epochs: Option<usize>,
    #[arg(long)]
    pub rep_patience: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ResolvedConfig {
    #[serde(flatten)]
    pub experiment: ExperimentConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ratios: Option<Vec<f64>>,
}

impl ResolvedConfig {
    /// Config file, then flags; the seed falls back to `ADB_SEED` only when
    /// neither names one.
    pub fn resolve(args: &ExperimentArgs) -> Result<Self> {
        let (mut cfg, file_has_seed) = match &args.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                let value: serde_json::Value = serde_json::from_str(&text)
                    .with_context(|| format!("parsing config {}", path.display()))?;
                let has_seed = value.get("base_seed").is_some();
                let cfg: ResolvedConfig = serde_json::from_value(value)
                    .with_context(|| format!("parsing config {}", path.display()))?;
                (cfg, has_seed)
            }
            None => (ResolvedConfig::default(), false),
        };
        let e = &mut cfg.experiment;
        match args.seed {
            Some(s) => e.base_seed = s,
            None if !file_has_seed => {
                if let Ok(env) = std::env::var("ADB_SEED") {
                    e.base_seed = env
                        .trim()
                        .parse()
                        .with_context(|| format!("ADB_SEED={env:?} is not an unsigned integer"))?;
                }
            }
            None => {}
        }
        macro_rules! set {
            ($flag:expr => $field:expr) => {
                if let Some(v) = $flag {
                    $field = v;
                }
            };
        }
        set!(args.known_ratio => e.known_ratio);
        set!(args.labeled_ratio => e.labeled_ratio);
        set!(args.val_fraction => e.val_fraction);
        set!(args.test_fraction => e.test_fraction);
        set!(args.runs => e.n_runs);
        set!(args.method => e.method);
        set!(args.threshold => e.msp_threshold);
        set!(args.parallel => e.parallel);
        set!(args.lr => e.boundary.learning_rate);
        set!(args.batch_size => e.boundary.batch_size);
        set!(args.max_epochs => e.boundary.max_epochs);
        set!(args.tol => e.boundary.convergence_tol);
        set!(args.patience => e.boundary.patience);
        set!(args.rep_lr => e.representation.learning_rate);
        set!(args.rep_batch_size => e.representation.batch_size);
        set!(args.rep_epochs => e.representation.max_epochs);
        set!(args.rep_patience => e.representation.early_stop_patience);
        if args.hidden_dim.is_some() {
            e.representation.hidden_dim = args.hidden_dim;
        }
        if args.skip_rep {
            e.skip_representation = true;
        }
        if args.fixed_split {
            e.vary_split = false;
        }
        // per-run seeds are derived from base_seed; the nested ones are overwritten
        e.boundary.seed = e.base_seed;
        e.representation.seed = e.base_seed;
        e.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        Ok(write_json(self, dir.join("config.json"))?)
    }
}
