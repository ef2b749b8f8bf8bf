//! Metrics and experiment orchestration.
//!
//! All open classes are pooled into one rejected class. Accuracy and macro-F1
//! are computed over the known classes plus that open class; macro-F1 is also
//! reported over the known classes alone, and F1 of the open class on its own.
//! Undefined precision, recall or F1 (zero denominator) counts as 0.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boundary::{
    compute_centroids, train_boundaries, AdbModel, BoundaryTrainConfig, CurvePoint,
};
use crate::data_io::{
    make_known_open_split, subsample_labeled, EmbeddedDataset, LabelMap, SplitConfig, SplitResult,
    OPEN_LABEL,
};
use crate::error::{AdbError, Result};
use crate::inference::{
    classify_batch, classify_batch_scaled, msp_classify_batch, Prediction, MSP_THRESHOLD,
};
use crate::representation::{
    embed_dataset, train_representation, RepTrainConfig, RepresentationModel,
};

/// Counts over the `K` known classes plus open (last index). Rows are gold, columns predicted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(label_map: &LabelMap) -> Self {
        let mut labels = label_map.names().to_vec();
        labels.push(OPEN_LABEL.to_string());
        let n = labels.len();
        Self {
            labels,
            counts: vec![vec![0; n]; n],
        }
    }

    pub fn open_index(&self) -> usize {
        self.labels.len() - 1
    }

    fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.labels.len()).map(|i| self.counts[i][i]).sum()
    }
}

pub fn confusion_matrix(
    preds: &[Prediction],
    golds: &[String],
    label_map: &LabelMap,
) -> Result<ConfusionMatrix> {
    if preds.len() != golds.len() {
        return Err(AdbError::invalid(format!(
            "{} predictions for {} gold labels",
            preds.len(),
            golds.len()
        )));
    }
    let mut cm = ConfusionMatrix::zeros(label_map);
    for (p, g) in preds.iter().zip(golds) {
        let gi = cm
            .index_of(g)
            .ok_or_else(|| AdbError::invalid(format!("unknown gold label {g:?}")))?;
        let pi = cm
            .index_of(&p.label)
            .ok_or_else(|| AdbError::invalid(format!("unknown predicted label {:?}", p.label)))?;
        cm.counts[gi][pi] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub f1_all: f64,
    pub f1_known: f64,
    pub f1_open: f64,
    pub labels: Vec<String>,
    pub per_class_f1: Vec<f64>,
    pub per_class_precision: Vec<f64>,
    pub per_class_recall: Vec<f64>,
    pub confusion: ConfusionMatrix,
}

impl MetricsReport {
    pub fn open_recall(&self) -> f64 {
        *self
            .per_class_recall
            .last()
            .expect("open class is always present")
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn compute_metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(AdbError::invalid("confusion matrix is empty"));
    }
    let n = cm.labels.len();
    let mut precision = Vec::with_capacity(n);
    let mut recall = Vec::with_capacity(n);
    let mut f1 = Vec::with_capacity(n);
    for i in 0..n {
        let tp = cm.counts[i][i];
        let row: u64 = cm.counts[i].iter().sum();
        let col: u64 = cm.counts.iter().map(|r| r[i]).sum();
        let p = ratio(tp, col);
        let r = ratio(tp, row);
        precision.push(p);
        recall.push(r);
        f1.push(if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            0.0
        });
    }
    let known = n - 1;
    Ok(MetricsReport {
        accuracy: ratio(cm.trace(), total),
        f1_all: f1.iter().sum::<f64>() / n as f64,
        f1_known: if known == 0 {
            0.0
        } else {
            f1[..known].iter().sum::<f64>() / known as f64
        },
        f1_open: f1[known],
        labels: cm.labels.clone(),
        per_class_f1: f1,
        per_class_precision: precision,
        per_class_recall: recall,
        confusion: cm.clone(),
    })
}

pub fn evaluate(preds: &[Prediction], test: &EmbeddedDataset) -> Result<MetricsReport> {
    let golds: Vec<String> = test.records.iter().map(|r| r.label.clone()).collect();
    compute_metrics(&confusion_matrix(preds, &golds, &test.label_map)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Adb,
    Msp,
}

impl std::str::FromStr for Method {
    type Err = AdbError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adb" => Ok(Method::Adb),
            "msp" => Ok(Method::Msp),
            other => Err(AdbError::invalid(format!("unknown method {other:?}"))),
        }
    }
}

/// Everything a single train-and-evaluate run needs apart from its seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub known_ratio: f64,
    pub labeled_ratio: f64,
    pub n_runs: usize,
    pub base_seed: u64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub method: Method,
    pub msp_threshold: f64,
    /// Learn boundaries directly on the input vectors.
    pub skip_representation: bool,
    /// Redraw known classes for every run; when false only model seeds change.
    pub vary_split: bool,
    pub boundary: BoundaryTrainConfig,
    pub representation: RepTrainConfig,
    /// Worker threads for independent runs; results do not depend on it.
    pub parallel: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            known_ratio: 0.5,
            labeled_ratio: 1.0,
            n_runs: 10,
            base_seed: 0,
            val_fraction: 0.1,
            test_fraction: 0.2,
            method: Method::Adb,
            msp_threshold: MSP_THRESHOLD,
            skip_representation: false,
            vary_split: true,
            boundary: BoundaryTrainConfig::default(),
            representation: RepTrainConfig::default(),
            parallel: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_runs == 0 {
            return Err(AdbError::invalid("n_runs must be at least 1"));
        }
        if !(self.labeled_ratio > 0.0 && self.labeled_ratio <= 1.0) {
            return Err(AdbError::invalid("labeled_ratio must be in (0, 1]"));
        }
        if self.method == Method::Msp && self.skip_representation {
            return Err(AdbError::invalid(
                "the msp method needs the representation classifier; drop skip_representation",
            ));
        }
        if !(self.msp_threshold > 0.0 && self.msp_threshold < 1.0) {
            return Err(AdbError::invalid("msp_threshold must be in (0, 1)"));
        }
        self.boundary.validate()?;
        self.representation.validate()
    }

    pub fn split_config(&self, run_seed: u64) -> SplitConfig {
        SplitConfig {
            known_ratio: self.known_ratio,
            val_fraction: self.val_fraction,
            test_fraction: self.test_fraction,
            seed: if self.vary_split {
                run_seed
            } else {
                self.base_seed
            },
        }
    }

    pub fn run_seed(&self, run: usize) -> u64 {
        self.base_seed.wrapping_add(run as u64)
    }
}

/// All artifacts of one split → subsample → pre-train → boundaries → test pass.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub seed: u64,
    pub split: SplitResult,
    /// Training set after labeled-ratio subsampling, in input space.
    pub train: EmbeddedDataset,
    pub representation: Option<RepresentationModel>,
    /// Test partition in the space the classifier consumes.
    pub test_features: EmbeddedDataset,
    pub adb: Option<AdbModel>,
    pub curve: Vec<CurvePoint>,
    pub predictions: Vec<Prediction>,
    pub metrics: MetricsReport,
}

pub fn run_once(dataset: &EmbeddedDataset, cfg: &ExperimentConfig, seed: u64) -> Result<RunOutput> {
    cfg.validate()?;
    let split = make_known_open_split(dataset, &cfg.split_config(seed))?;
    let train = subsample_labeled(&split.train, cfg.labeled_ratio, seed)?;

    let representation = if cfg.skip_representation {
        None
    } else {
        let rep_cfg = RepTrainConfig {
            seed,
            ..cfg.representation
        };
        Some(train_representation(&train, &split.validation, &rep_cfg)?.model)
    };

    match cfg.method {
        Method::Msp => {
            let rep = representation.expect("validated: msp always trains a representation");
            let predictions = msp_classify_batch(&rep, &split.test, cfg.msp_threshold)?;
            let metrics = evaluate(&predictions, &split.test)?;
            Ok(RunOutput {
                seed,
                test_features: split.test.clone(),
                split,
                train,
                representation: Some(rep),
                adb: None,
                curve: Vec::new(),
                predictions,
                metrics,
            })
        }
        Method::Adb => {
            let (train_features, test_features) = match &representation {
                Some(rep) => (
                    embed_dataset(rep, &train)?,
                    embed_dataset(rep, &split.test)?,
                ),
                None => (train.clone(), split.test.clone()),
            };
            let centroids = compute_centroids(&train_features)?;
            let bcfg = BoundaryTrainConfig {
                seed,
                ..cfg.boundary
            };
            let fit = train_boundaries(&train_features, &centroids, &bcfg)?;
            let predictions = classify_batch(&fit.model, &test_features)?;
            let metrics = evaluate(&predictions, &test_features)?;
            Ok(RunOutput {
                seed,
                split,
                train,
                representation,
                test_features,
                adb: Some(fit.model),
                curve: fit.curve,
                predictions,
                metrics,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub accuracy: f64,
    pub f1_all: f64,
    pub f1_known: f64,
    pub f1_open: f64,
}

impl MetricSummary {
    fn of(m: &MetricsReport) -> Self {
        Self {
            accuracy: m.accuracy,
            f1_all: m.f1_all,
            f1_known: m.f1_known,
            f1_open: m.f1_open,
        }
    }

    fn map(rows: &[Self], f: impl Fn(&[f64]) -> f64) -> Self {
        let col = |g: fn(&Self) -> f64| f(&rows.iter().map(g).collect::<Vec<_>>());
        Self {
            accuracy: col(|m| m.accuracy),
            f1_all: col(|m| m.f1_all),
            f1_known: col(|m| m.f1_known),
            f1_open: col(|m| m.f1_open),
        }
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation; zero for a single value.
fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub seeds: Vec<u64>,
    pub known_classes: Vec<Vec<String>>,
    pub train_sizes: Vec<usize>,
    pub runs: Vec<MetricsReport>,
    pub mean: MetricSummary,
    pub std: MetricSummary,
}

impl ExperimentReport {
    pub fn mean_train_size(&self) -> f64 {
        self.train_sizes.iter().sum::<usize>() as f64 / self.train_sizes.len() as f64
    }
}

pub fn run_experiment(
    dataset: &EmbeddedDataset,
    cfg: &ExperimentConfig,
) -> Result<ExperimentReport> {
    cfg.validate()?;
    let one = |r: usize| -> Result<(u64, Vec<String>, usize, MetricsReport)> {
        let seed = cfg.run_seed(r);
        let out = run_once(dataset, cfg, seed)
            .map_err(|e| AdbError::invalid(format!("run {r} (seed {seed}) failed: {e}")))?;
        log::info!(
            "run {r}: accuracy {:.4} f1_all {:.4} f1_open {:.4}",
            out.metrics.accuracy,
            out.metrics.f1_all,
            out.metrics.f1_open
        );
        Ok((seed, out.split.known_classes, out.train.len(), out.metrics))
    };
    let results: Vec<_> = if cfg.parallel > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.parallel)
            .build()
            .map_err(|e| AdbError::invalid(format!("thread pool: {e}")))?;
        pool.install(|| {
            (0..cfg.n_runs)
                .into_par_iter()
                .map(one)
                .collect::<Result<Vec<_>>>()
        })?
    } else {
        (0..cfg.n_runs).map(one).collect::<Result<Vec<_>>>()?
    };

    let mut report = ExperimentReport {
        config: cfg.clone(),
        seeds: Vec::new(),
        known_classes: Vec::new(),
        train_sizes: Vec::new(),
        runs: Vec::new(),
        mean: MetricSummary {
            accuracy: 0.0,
            f1_all: 0.0,
            f1_known: 0.0,
            f1_open: 0.0,
        },
        std: MetricSummary {
            accuracy: 0.0,
            f1_all: 0.0,
            f1_known: 0.0,
            f1_open: 0.0,
        },
    };
    for (seed, known, size, metrics) in results {
        report.seeds.push(seed);
        report.known_classes.push(known);
        report.train_sizes.push(size);
        report.runs.push(metrics);
    }
    let rows: Vec<MetricSummary> = report.runs.iter().map(MetricSummary::of).collect();
    report.mean = MetricSummary::map(&rows, mean);
    report.std = MetricSummary::map(&rows, std_dev);
    Ok(report)
}

/// `run,accuracy,f1_all,f1_known,f1_open`
pub fn write_report_csv<W: Write>(report: &ExperimentReport, mut w: W) -> std::io::Result<()> {
    writeln!(w, "run,accuracy,f1_all,f1_known,f1_open")?;
    for (i, m) in report.runs.iter().enumerate() {
        writeln!(
            w,
            "{i},{},{},{},{}",
            m.accuracy, m.f1_all, m.f1_known, m.f1_open
        )?;
    }
    w.flush()
}

pub fn write_metrics_csv<W: Write>(m: &MetricsReport, mut w: W) -> std::io::Result<()> {
    writeln!(w, "accuracy,f1_all,f1_known,f1_open")?;
    writeln!(
        w,
        "{},{},{},{}",
        m.accuracy, m.f1_all, m.f1_known, m.f1_open
    )?;
    w.flush()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundarySweepRow {
    pub ratio: f64,
    pub metrics: MetricsReport,
}

/// Re-evaluates `model` with every radius scaled by each ratio in turn.
pub fn boundary_ratio_sweep(
    model: &AdbModel,
    test: &EmbeddedDataset,
    ratios: &[f64],
) -> Result<Vec<BoundarySweepRow>> {
    if let Some(r) = ratios.iter().find(|r| !(r.is_finite() && **r > 0.0)) {
        return Err(AdbError::invalid(format!(
            "sweep ratios must be positive, got {r}"
        )));
    }
    ratios
        .iter()
        .map(|&ratio| {
            let preds = classify_batch_scaled(model, test, ratio)?;
            Ok(BoundarySweepRow {
                ratio,
                metrics: evaluate(&preds, test)?,
            })
        })
        .collect()
}

pub const DEFAULT_BOUNDARY_RATIOS: [f64; 7] = [0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 2.0];
pub const DEFAULT_LABELED_RATIOS: [f64; 5] = [0.2, 0.4, 0.6, 0.8, 1.0];

/// `ratio,accuracy,f1_all,f1_known,f1_open,open_recall`
pub fn write_boundary_sweep_csv<W: Write>(
    rows: &[BoundarySweepRow],
    mut w: W,
) -> std::io::Result<()> {
    writeln!(w, "ratio,accuracy,f1_all,f1_known,f1_open,open_recall")?;
    for r in rows {
        let m = &r.metrics;
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.ratio,
            m.accuracy,
            m.f1_all,
            m.f1_known,
            m.f1_open,
            m.open_recall()
        )?;
    }
    w.flush()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSweepRow {
    pub labeled_ratio: f64,
    pub report: ExperimentReport,
}

pub fn labeled_ratio_sweep(
    dataset: &EmbeddedDataset,
    cfg: &ExperimentConfig,
    ratios: &[f64],
) -> Result<Vec<LabeledSweepRow>> {
    if let Some(r) = ratios.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
        return Err(AdbError::invalid(format!(
            "labeled ratios must be in (0, 1], got {r}"
        )));
    }
    ratios
        .iter()
        .map(|&labeled_ratio| {
            let run_cfg = ExperimentConfig {
                labeled_ratio,
                ..cfg.clone()
            };
            Ok(LabeledSweepRow {
                labeled_ratio,
                report: run_experiment(dataset, &run_cfg)?,
            })
        })
        .collect()
}

pub fn write_labeled_sweep_csv<W: Write>(
    rows: &[LabeledSweepRow],
    mut w: W,
) -> std::io::Result<()> {
    writeln!(
        w,
        "labeled_ratio,train_size,accuracy,accuracy_std,f1_all,f1_all_std,f1_known,f1_known_std,f1_open,f1_open_std"
    )?;
    for r in rows {
        let (m, s) = (&r.report.mean, &r.report.std);
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            r.labeled_ratio,
            r.report.mean_train_size(),
            m.accuracy,
            s.accuracy,
            m.f1_all,
            s.f1_all,
            m.f1_known,
            s.f1_known,
            m.f1_open,
            s.f1_open
        )?;
    }
    w.flush()
}

pub fn save_with<F>(path: impl AsRef<Path>, f: F) -> Result<()>
where
    F: FnOnce(&mut std::io::BufWriter<std::fs::File>) -> std::io::Result<()>,
{
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| AdbError::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    f(&mut w).map_err(|e| AdbError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(label: &str) -> Prediction {
        Prediction {
            label: label.into(),
            nearest_class: "a".into(),
            distance: 0.0,
            margin: 0.0,
        }
    }

    fn lm(names: &[&str]) -> LabelMap {
        LabelMap::new(names.iter().map(|s| s.to_string()).collect()).unwrap()
    }

    #[test]
    fn confusion_tally() {
        let labels = lm(&["a", "b"]);
        let preds = [pred("a"), pred("b"), pred("open")];
        let golds = ["a", "a", "open"].map(String::from);
        let cm = confusion_matrix(&preds, &golds, &labels).unwrap();
        assert_eq!(cm.counts, vec![vec![1, 1, 0], vec![0, 0, 0], vec![0, 0, 1]]);

        let empty = confusion_matrix(&[], &[], &labels).unwrap();
        assert_eq!(empty.total(), 0);
        assert!(compute_metrics(&empty).is_err());

        assert!(confusion_matrix(&preds[..1], &golds, &labels).is_err());
        assert!(confusion_matrix(&[pred("z")], &["a".into()], &labels).is_err());
    }

    #[test]
    fn all_correct_is_diagonal() {
        let labels = lm(&["a", "b"]);
        let preds = [pred("a"), pred("b"), pred("open")];
        let golds = ["a", "b", "open"].map(String::from);
        let cm = confusion_matrix(&preds, &golds, &labels).unwrap();
        let m = compute_metrics(&cm).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.f1_all, 1.0);
        assert_eq!(m.f1_known, 1.0);
        assert_eq!(m.f1_open, 1.0);
    }

    #[test]
    fn absent_class_scores_zero() {
        let cm = ConfusionMatrix {
            labels: vec!["a".into(), "b".into(), "open".into()],
            counts: vec![vec![3, 0, 0], vec![0, 0, 0], vec![0, 0, 2]],
        };
        let m = compute_metrics(&cm).unwrap();
        assert_eq!(m.per_class_f1, vec![1.0, 0.0, 1.0]);
        assert!((m.f1_all - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.f1_known, 0.5);
    }

    #[test]
    fn std_dev_conventions() {
        assert_eq!(std_dev(&[0.3]), 0.0);
        assert!((std_dev(&[1.0, 3.0]) - 2f64.sqrt()).abs() < 1e-15);
    }
}
