//! Dataset ingestion, synthetic generation, known/open splitting, and model
//! persistence.
//!
//! Two embedding formats are accepted:
//!
//! * CSV with header `label,f0,f1,...,f{D-1}` and one record per row.
//! * JSON lines, each either `{"label": .., "vector": [..]}` or
//!   `{"label": .., "tokens": [[..], ..]}`. Token sequences are mean-pooled at
//!   load time, so nothing downstream ever sees a sequence.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::boundary::{softplus, AdbModel, BoundaryParams, BoundaryTrainConfig, Centroids};
use crate::error::{AdbError, Result};
use crate::representation::{RepTrainConfig, RepresentationModel};
use crate::rng::{stream_rng, Stream};

/// Reserved name of the rejected class.
pub const OPEN_LABEL: &str = "open";

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Ordered, duplicate-free list of known class names. Index `k` is class `k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct LabelMap {
    names: Vec<String>,
}

impl LabelMap {
    pub fn new(names: Vec<String>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(names.len());
        for name in &names {
            if name == OPEN_LABEL {
                return Err(AdbError::invalid(format!(
                    "\"{OPEN_LABEL}\" is reserved and cannot be a known class"
                )));
            }
            if !seen.insert(name.as_str()) {
                return Err(AdbError::invalid(format!("duplicate class name {name:?}")));
            }
        }
        Ok(Self { names })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.names.get(index).map(String::as_str)
    }
}

impl<'de> Deserialize<'de> for LabelMap {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let names = Vec::<String>::deserialize(d)?;
        LabelMap::new(names).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub label: String,
    pub vector: Vec<f64>,
}

impl EmbeddingRecord {
    pub fn new(label: impl Into<String>, vector: Vec<f64>) -> Self {
        Self {
            label: label.into(),
            vector,
        }
    }

    pub fn is_open(&self) -> bool {
        self.label == OPEN_LABEL
    }
}

/// Labelled feature vectors of a common dimension.
///
/// Records may carry the reserved [`OPEN_LABEL`]; that only happens in test
/// partitions produced by [`make_known_open_split`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedDataset {
    pub records: Vec<EmbeddingRecord>,
    pub label_map: LabelMap,
    pub dim: usize,
}

impl EmbeddedDataset {
    pub fn new(records: Vec<EmbeddingRecord>, label_map: LabelMap, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(AdbError::invalid("dimension must be at least 1"));
        }
        for (i, r) in records.iter().enumerate() {
            if r.vector.len() != dim {
                return Err(AdbError::dim(dim, r.vector.len()));
            }
            if r.vector.iter().any(|v| !v.is_finite()) {
                return Err(AdbError::invalid(format!(
                    "record {i} has a non-finite component"
                )));
            }
            if !r.is_open() && label_map.index_of(&r.label).is_none() {
                return Err(AdbError::invalid(format!(
                    "record {i} has label {:?} which is not in the label map",
                    r.label
                )));
            }
        }
        Ok(Self {
            records,
            label_map,
            dim,
        })
    }

    /// Builds the label map from distinct non-open labels in first-appearance order.
    pub fn from_records(records: Vec<EmbeddingRecord>) -> Result<Self> {
        let first = records.first().ok_or(AdbError::EmptyDataset)?;
        let dim = first.vector.len();
        let mut names = Vec::new();
        let mut seen = HashSet::new();
        for r in &records {
            if !r.is_open() && seen.insert(r.label.as_str()) {
                names.push(r.label.clone());
            }
        }
        let label_map = LabelMap::new(names)?;
        Self::new(records, label_map, dim)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.label_map.len()
    }

    /// Class index of record `i`, `None` for open records.
    pub fn class_index(&self, i: usize) -> Option<usize> {
        self.label_map.index_of(&self.records[i].label)
    }

    /// `(vector, class index)` pairs for every known-class record, in order.
    pub fn labelled(&self) -> Result<Vec<(&[f64], usize)>> {
        self.records
            .iter()
            .map(|r| {
                self.label_map
                    .index_of(&r.label)
                    .map(|k| (r.vector.as_slice(), k))
                    .ok_or_else(|| {
                        AdbError::invalid(format!(
                            "record label {:?} is not a known class",
                            r.label
                        ))
                    })
            })
            .collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for r in &self.records {
            if let Some(k) = self.label_map.index_of(&r.label) {
                counts[k] += 1;
            }
        }
        counts
    }

    pub fn open_count(&self) -> usize {
        self.records.iter().filter(|r| r.is_open()).count()
    }

    /// Checks the training-role contract: only known labels, every class populated.
    pub fn ensure_training_ready(&self) -> Result<()> {
        if self.is_empty() {
            return Err(AdbError::EmptyDataset);
        }
        if self.records.iter().any(EmbeddingRecord::is_open) {
            return Err(AdbError::invalid(
                "training data must not contain open records",
            ));
        }
        for (k, &n) in self.class_counts().iter().enumerate() {
            if n == 0 {
                return Err(AdbError::InsufficientData(format!(
                    "class {:?} has no training records",
                    self.label_map.names[k]
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    Csv,
    Jsonl,
}

impl DataFormat {
    /// Guesses from the file extension; anything other than `.jsonl`/`.json` is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") | Some("ndjson") => DataFormat::Jsonl,
            _ => DataFormat::Csv,
        }
    }
}

impl FromStr for DataFormat {
    type Err = AdbError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(DataFormat::Csv),
            "jsonl" | "ndjson" => Ok(DataFormat::Jsonl),
            other => Err(AdbError::invalid(format!("unknown data format {other:?}"))),
        }
    }
}

impl fmt::Display for DataFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DataFormat::Csv => "csv",
            DataFormat::Jsonl => "jsonl",
        })
    }
}

pub fn load_dataset(path: impl AsRef<Path>, format: DataFormat) -> Result<EmbeddedDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| AdbError::io(path, e))?;
    match format {
        DataFormat::Csv => read_csv(file),
        DataFormat::Jsonl => read_jsonl(BufReader::new(file)),
    }
}

pub fn read_csv<R: Read>(reader: R) -> Result<EmbeddedDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr.headers().map_err(csv_error)?.clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(AdbError::EmptyDataset);
    }
    if header[0].trim() != "label" {
        return Err(AdbError::Parse {
            line: 1,
            message: format!(
                "first header column must be \"label\", got {:?}",
                &header[0]
            ),
        });
    }
    let dim = header.len() - 1;
    if dim == 0 {
        return Err(AdbError::Parse {
            line: 1,
            message: "header declares no feature columns".into(),
        });
    }

    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(csv_error)?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() == 1 && row[0].trim().is_empty() {
            continue;
        }
        if row.len() != dim + 1 {
            return Err(AdbError::DimensionMismatch {
                expected: dim,
                found: row.len().saturating_sub(1),
                line: Some(line),
            });
        }
        let vector = row
            .iter()
            .skip(1)
            .map(|field| parse_component(field, line))
            .collect::<Result<Vec<_>>>()?;
        records.push(EmbeddingRecord::new(&row[0], vector));
    }
    EmbeddedDataset::from_records(records)
}

fn parse_component(field: &str, line: u64) -> Result<f64> {
    let v: f64 = field.trim().parse().map_err(|_| AdbError::Parse {
        line,
        message: format!("{field:?} is not a number"),
    })?;
    if !v.is_finite() {
        return Err(AdbError::Parse {
            line,
            message: format!("{field:?} is not finite"),
        });
    }
    Ok(v)
}

fn csv_error(e: csv::Error) -> AdbError {
    let line = e.position().map_or(0, |p| p.line());
    AdbError::Parse {
        line,
        message: e.to_string(),
    }
}

#[derive(Deserialize)]
struct JsonRow {
    label: String,
    #[serde(default)]
    vector: Option<Vec<f64>>,
    #[serde(default)]
    tokens: Option<Vec<Vec<f64>>>,
}

pub fn read_jsonl<R: BufRead>(reader: R) -> Result<EmbeddedDataset> {
    let mut records = Vec::new();
    let mut dim: Option<usize> = None;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i as u64 + 1;
        let line = line.map_err(|e| AdbError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let row: JsonRow = serde_json::from_str(&line).map_err(|e| AdbError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let vector = match (row.vector, row.tokens) {
            (Some(v), None) => v,
            (None, Some(tokens)) => mean_pool(&tokens).map_err(|e| AdbError::Parse {
                line: line_no,
                message: e.to_string(),
            })?,
            _ => {
                return Err(AdbError::Parse {
                    line: line_no,
                    message: "expected exactly one of \"vector\" or \"tokens\"".into(),
                })
            }
        };
        match dim {
            None if vector.is_empty() => {
                return Err(AdbError::Parse {
                    line: line_no,
                    message: "vector must have at least one component".into(),
                })
            }
            None => dim = Some(vector.len()),
            Some(d) if d != vector.len() => {
                return Err(AdbError::DimensionMismatch {
                    expected: d,
                    found: vector.len(),
                    line: Some(line_no),
                })
            }
            Some(_) => {}
        }
        records.push(EmbeddingRecord::new(row.label, vector));
    }
    EmbeddedDataset::from_records(records)
}

pub fn write_csv<W: Write>(data: &EmbeddedDataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = Vec::with_capacity(data.dim + 1);
    header.push("label".to_string());
    header.extend((0..data.dim).map(|j| format!("f{j}")));
    w.write_record(&header).map_err(csv_error)?;
    for r in &data.records {
        let mut row = Vec::with_capacity(data.dim + 1);
        row.push(r.label.clone());
        row.extend(r.vector.iter().map(f64::to_string));
        w.write_record(&row).map_err(csv_error)?;
    }
    w.flush().map_err(|e| AdbError::io("<csv writer>", e))
}

pub fn save_dataset_csv(data: &EmbeddedDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| AdbError::io(path, e))?;
    write_csv(data, BufWriter::new(file))
}

/// Component-wise arithmetic mean of a non-empty sequence of equal-length vectors.
pub fn mean_pool(tokens: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = tokens
        .first()
        .ok_or_else(|| AdbError::invalid("cannot mean-pool an empty token sequence"))?;
    let h = first.len();
    if h == 0 {
        return Err(AdbError::invalid(
            "token vectors must have at least one component",
        ));
    }
    let mut sum = vec![0.0; h];
    for t in tokens {
        if t.len() != h {
            return Err(AdbError::dim(h, t.len()));
        }
        for (s, v) in sum.iter_mut().zip(t) {
            *s += v;
        }
    }
    let n = tokens.len() as f64;
    Ok(sum.into_iter().map(|s| s / n).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub known_ratio: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            known_ratio: 0.5,
            val_fraction: 0.1,
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

impl SplitConfig {
    fn validate(&self) -> Result<()> {
        if !(self.known_ratio > 0.0 && self.known_ratio <= 1.0) {
            return Err(AdbError::invalid(format!(
                "known_ratio must be in (0, 1], got {}",
                self.known_ratio
            )));
        }
        for (name, f) in [
            ("val_fraction", self.val_fraction),
            ("test_fraction", self.test_fraction),
        ] {
            if !(f > 0.0 && f < 1.0) {
                return Err(AdbError::invalid(format!(
                    "{name} must be in (0, 1), got {f}"
                )));
            }
        }
        if self.val_fraction + self.test_fraction >= 1.0 {
            return Err(AdbError::invalid(
                "val_fraction + test_fraction must be below 1",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitResult {
    pub train: EmbeddedDataset,
    pub validation: EmbeddedDataset,
    pub test: EmbeddedDataset,
    pub known_classes: Vec<String>,
    pub open_classes: Vec<String>,
    pub known_ratio: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionCounts {
    pub train: usize,
    pub validation: usize,
    pub test_known: usize,
    pub test_open: usize,
}

/// JSON summary of a split, written next to trained models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub known_classes: Vec<String>,
    pub open_classes: Vec<String>,
    pub known_ratio: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
    /// Known classes are redrawn for every seed.
    pub class_resampling: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labeled_ratio: Option<f64>,
    pub counts: PartitionCounts,
}

impl SplitResult {
    pub fn manifest(&self) -> SplitManifest {
        let test_open = self.test.open_count();
        SplitManifest {
            known_classes: self.known_classes.clone(),
            open_classes: self.open_classes.clone(),
            known_ratio: self.known_ratio,
            val_fraction: self.val_fraction,
            test_fraction: self.test_fraction,
            seed: self.seed,
            class_resampling: true,
            labeled_ratio: None,
            counts: PartitionCounts {
                train: self.train.len(),
                validation: self.validation.len(),
                test_known: self.test.len() - test_open,
                test_open,
            },
        }
    }
}

/// Per-class (train, validation, test) sizes; each is at least one when `n >= 3`.
fn partition_sizes(n: usize, val_fraction: f64, test_fraction: f64) -> (usize, usize, usize) {
    let mut val = ((n as f64 * val_fraction).round() as usize).max(1);
    let mut test = ((n as f64 * test_fraction).round() as usize).max(1);
    while val + test >= n {
        if test >= val && test > 1 {
            test -= 1;
        } else if val > 1 {
            val -= 1;
        } else {
            break;
        }
    }
    (n.saturating_sub(val + test), val, test)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Role {
    Train,
    Validation,
    Test,
}

/// Holds out a random subset of classes as "open" and partitions the rest.
///
/// Known classes are drawn without replacement from the lexicographically
/// sorted class names. Each class's records are shuffled and cut into
/// train/validation/test. Only the test cut of a held-out class is kept, and
/// it is relabelled [`OPEN_LABEL`].
pub fn make_known_open_split(data: &EmbeddedDataset, cfg: &SplitConfig) -> Result<SplitResult> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(AdbError::EmptyDataset);
    }
    if data.open_count() > 0 {
        return Err(AdbError::invalid(
            "dataset to split already contains open records",
        ));
    }
    let total = data.num_classes();
    if cfg.known_ratio < 1.0 && total < 2 {
        return Err(AdbError::invalid(
            "at least two classes are needed to hold some out as open",
        ));
    }
    let n_known = ((total as f64 * cfg.known_ratio).round() as usize).clamp(1, total);

    let mut sorted: Vec<&str> = data.label_map.names().iter().map(String::as_str).collect();
    sorted.sort_unstable();
    let mut shuffled = sorted.clone();
    shuffled.shuffle(&mut stream_rng(cfg.seed, Stream::ClassSelection));
    let known: HashSet<&str> = shuffled[..n_known].iter().copied().collect();
    let known_classes: Vec<String> = sorted
        .iter()
        .filter(|c| known.contains(*c))
        .map(|c| c.to_string())
        .collect();
    let open_classes: Vec<String> = sorted
        .iter()
        .filter(|c| !known.contains(*c))
        .map(|c| c.to_string())
        .collect();

    let mut members: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in data.records.iter().enumerate() {
        members.entry(r.label.as_str()).or_default().push(i);
    }

    let mut roles: Vec<Option<Role>> = vec![None; data.len()];
    let mut rng = stream_rng(cfg.seed, Stream::RecordPartition);
    for class in &sorted {
        let mut idx = members.remove(class).unwrap_or_default();
        let n = idx.len();
        let is_known = known.contains(class);
        if is_known && n < 3 {
            return Err(AdbError::InsufficientData(format!(
                "class {class:?} has {n} records; a known class needs at least 3"
            )));
        }
        idx.shuffle(&mut rng);
        let (n_train, n_val) = if n >= 3 {
            let (t, v, _) = partition_sizes(n, cfg.val_fraction, cfg.test_fraction);
            (t, v)
        } else {
            (0, 0)
        };
        for (pos, &i) in idx.iter().enumerate() {
            let role = if pos < n_train {
                Role::Train
            } else if pos < n_train + n_val {
                Role::Validation
            } else {
                Role::Test
            };
            if is_known || role == Role::Test {
                roles[i] = Some(role);
            }
        }
    }

    let label_map = LabelMap::new(known_classes.clone())?;
    let mut train = Vec::new();
    let mut validation = Vec::new();
    let mut test = Vec::new();
    for (r, role) in data.records.iter().zip(&roles) {
        let is_known = known.contains(r.label.as_str());
        match role {
            Some(Role::Train) => train.push(r.clone()),
            Some(Role::Validation) => validation.push(r.clone()),
            Some(Role::Test) if is_known => test.push(r.clone()),
            Some(Role::Test) => test.push(EmbeddingRecord::new(OPEN_LABEL, r.vector.clone())),
            None => {}
        }
    }

    Ok(SplitResult {
        train: EmbeddedDataset::new(train, label_map.clone(), data.dim)?,
        validation: EmbeddedDataset::new(validation, label_map.clone(), data.dim)?,
        test: EmbeddedDataset::new(test, label_map, data.dim)?,
        known_classes,
        open_classes,
        known_ratio: cfg.known_ratio,
        val_fraction: cfg.val_fraction,
        test_fraction: cfg.test_fraction,
        seed: cfg.seed,
    })
}

/// Keeps `round(n_k * ratio)` records of every class (at least one), drawn under `seed`.
pub fn subsample_labeled(
    train: &EmbeddedDataset,
    labeled_ratio: f64,
    seed: u64,
) -> Result<EmbeddedDataset> {
    if !(labeled_ratio > 0.0 && labeled_ratio <= 1.0) {
        return Err(AdbError::invalid(format!(
            "labeled_ratio must be in (0, 1], got {labeled_ratio}"
        )));
    }
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); train.num_classes() + 1];
    for (i, r) in train.records.iter().enumerate() {
        let g = train
            .label_map
            .index_of(&r.label)
            .unwrap_or(train.num_classes());
        groups[g].push(i);
    }
    let mut keep = vec![false; train.len()];
    let mut rng = stream_rng(seed, Stream::Subsample);
    for mut idx in groups.into_iter().filter(|g| !g.is_empty()) {
        let n_keep = ((idx.len() as f64 * labeled_ratio).round() as usize).clamp(1, idx.len());
        idx.shuffle(&mut rng);
        for &i in &idx[..n_keep] {
            keep[i] = true;
        }
    }
    let records = train
        .records
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(r, _)| r.clone())
        .collect();
    EmbeddedDataset::new(records, train.label_map.clone(), train.dim)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub centroid_scale: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SyntheticConfig {
    fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(AdbError::invalid("n_classes must be at least 2"));
        }
        if self.per_class < 1 {
            return Err(AdbError::invalid("per_class must be at least 1"));
        }
        if self.dim < 1 {
            return Err(AdbError::invalid("dim must be at least 1"));
        }
        if !(self.centroid_scale.is_finite() && self.centroid_scale >= 0.0) {
            return Err(AdbError::invalid(
                "centroid_scale must be finite and non-negative",
            ));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma > 0.0) {
            return Err(AdbError::invalid("noise_sigma must be finite and positive"));
        }
        Ok(())
    }

    /// Class names `c0`, `c1`, ... zero-padded so lexicographic and numeric order agree.
    pub fn class_name(&self, k: usize) -> String {
        let width = (self.n_classes - 1).max(1).to_string().len();
        format!("c{k:0width$}")
    }
}

/// The class centers a [`generate_synthetic`] call with the same config draws.
pub fn synthetic_centers(cfg: &SyntheticConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let mut rng = stream_rng(cfg.seed, Stream::Synthetic);
    Ok(draw_centers(cfg, &mut rng))
}

fn draw_centers(cfg: &SyntheticConfig, rng: &mut crate::rng::Rng) -> Vec<Vec<f64>> {
    let s = cfg.centroid_scale;
    (0..cfg.n_classes)
        .map(|_| (0..cfg.dim).map(|_| rng.random_range(-s..=s)).collect())
        .collect()
}

/// Isotropic Gaussian clusters around uniformly placed centers.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<EmbeddedDataset> {
    cfg.validate()?;
    let mut rng = stream_rng(cfg.seed, Stream::Synthetic);
    let centers = draw_centers(cfg, &mut rng);
    let mut records = Vec::with_capacity(cfg.n_classes * cfg.per_class);
    for (k, center) in centers.iter().enumerate() {
        let name = cfg.class_name(k);
        for _ in 0..cfg.per_class {
            let v = center
                .iter()
                .map(|c| {
                    let n: f64 = rng.sample(StandardNormal);
                    c + cfg.noise_sigma * n
                })
                .collect();
            records.push(EmbeddingRecord::new(name.clone(), v));
        }
    }
    let names = (0..cfg.n_classes).map(|k| cfg.class_name(k)).collect();
    EmbeddedDataset::new(records, LabelMap::new(names)?, cfg.dim)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdbModelFile {
    format_version: u32,
    dim: usize,
    labels: Vec<String>,
    centroids: Vec<Vec<f64>>,
    delta_hat: Vec<f64>,
    radii: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    counts: Option<Vec<usize>>,
    config: BoundaryTrainConfig,
    seed: u64,
}

fn format_err(msg: impl Into<String>) -> AdbError {
    AdbError::ModelFormat(msg.into())
}

pub fn model_to_json(model: &AdbModel) -> Result<String> {
    let file = AdbModelFile {
        format_version: MODEL_FORMAT_VERSION,
        dim: model.dim,
        labels: model.label_map.names().to_vec(),
        centroids: model.centroids.centers.clone(),
        delta_hat: model.params.delta_hat.clone(),
        radii: model.radii().to_vec(),
        counts: Some(model.centroids.counts.clone()),
        config: model.config,
        seed: model.config.seed,
    };
    serde_json::to_string_pretty(&file).map_err(|e| format_err(e.to_string()))
}

pub fn model_from_json(text: &str) -> Result<AdbModel> {
    let file: AdbModelFile = serde_json::from_str(text).map_err(|e| format_err(e.to_string()))?;
    if file.format_version != MODEL_FORMAT_VERSION {
        return Err(format_err(format!(
            "unsupported format_version {} (expected {MODEL_FORMAT_VERSION})",
            file.format_version
        )));
    }
    let k = file.labels.len();
    if k == 0 {
        return Err(format_err("model has no classes"));
    }
    if file.centroids.len() != k {
        return Err(format_err(format!(
            "{} centroids for {k} labels",
            file.centroids.len()
        )));
    }
    if file.delta_hat.len() != k {
        return Err(format_err(format!(
            "{} delta_hat values for {k} labels",
            file.delta_hat.len()
        )));
    }
    if file.radii.len() != k {
        return Err(format_err(format!(
            "{} radii for {} centroids",
            file.radii.len(),
            k
        )));
    }
    if let Some(c) = file.centroids.iter().find(|c| c.len() != file.dim) {
        return Err(format_err(format!(
            "centroid of length {} in a dim-{} model",
            c.len(),
            file.dim
        )));
    }
    for (j, (&r, &dh)) in file.radii.iter().zip(&file.delta_hat).enumerate() {
        if !(r.is_finite() && r > 0.0) {
            return Err(format_err(format!(
                "radius {j} is {r}; radii must be positive"
            )));
        }
        let expect = softplus(dh);
        if (r - expect).abs() > 1e-9 * expect.max(1.0) {
            return Err(format_err(format!(
                "radius {j} = {r} disagrees with softplus(delta_hat) = {expect}"
            )));
        }
    }
    if file.seed != file.config.seed {
        return Err(format_err("seed disagrees with config.seed"));
    }
    let counts = file.counts.unwrap_or_else(|| vec![1; k]);
    if counts.len() != k {
        return Err(format_err(format!(
            "{} counts for {k} labels",
            counts.len()
        )));
    }
    let label_map = LabelMap::new(file.labels).map_err(|e| format_err(e.to_string()))?;
    let centroids =
        Centroids::new(file.centroids, counts).map_err(|e| format_err(e.to_string()))?;
    AdbModel::new(
        centroids,
        BoundaryParams::new(file.delta_hat),
        label_map,
        file.config,
    )
    .map_err(|e| format_err(e.to_string()))
}

pub fn save_model(model: &AdbModel, path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &model_to_json(model)?)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<AdbModel> {
    model_from_json(&read_text(path.as_ref())?)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RepModelFile {
    format_version: u32,
    kind: String,
    d_in: usize,
    d_out: usize,
    labels: Vec<String>,
    w_h: Vec<Vec<f64>>,
    b_h: Vec<f64>,
    w_phi: Vec<Vec<f64>>,
    b_phi: Vec<f64>,
    config: RepTrainConfig,
    seed: u64,
}

pub fn representation_to_json(model: &RepresentationModel) -> Result<String> {
    let file = RepModelFile {
        format_version: MODEL_FORMAT_VERSION,
        kind: "representation".into(),
        d_in: model.d_in(),
        d_out: model.d_out(),
        labels: model.label_map.names().to_vec(),
        w_h: model.w_h.to_rows(),
        b_h: model.b_h.clone(),
        w_phi: model.w_phi.to_rows(),
        b_phi: model.b_phi.clone(),
        config: model.config,
        seed: model.config.seed,
    };
    serde_json::to_string_pretty(&file).map_err(|e| format_err(e.to_string()))
}

pub fn representation_from_json(text: &str) -> Result<RepresentationModel> {
    let file: RepModelFile = serde_json::from_str(text).map_err(|e| format_err(e.to_string()))?;
    if file.format_version != MODEL_FORMAT_VERSION {
        return Err(format_err(format!(
            "unsupported format_version {}",
            file.format_version
        )));
    }
    if file.kind != "representation" {
        return Err(format_err(format!(
            "expected kind \"representation\", got {:?}",
            file.kind
        )));
    }
    let label_map = LabelMap::new(file.labels).map_err(|e| format_err(e.to_string()))?;
    let model = RepresentationModel::from_parts(
        file.w_h,
        file.b_h,
        file.w_phi,
        file.b_phi,
        label_map,
        file.config,
    )
    .map_err(|e| format_err(e.to_string()))?;
    if model.d_in() != file.d_in || model.d_out() != file.d_out {
        return Err(format_err(
            "declared d_in/d_out disagree with the weight shapes",
        ));
    }
    Ok(model)
}

pub fn save_representation(model: &RepresentationModel, path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &representation_to_json(model)?)
}

pub fn load_representation(path: impl AsRef<Path>) -> Result<RepresentationModel> {
    representation_from_json(&read_text(path.as_ref())?)
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = File::create(path).map_err(|e| AdbError::io(path, e))?;
    f.write_all(text.as_bytes())
        .and_then(|_| f.write_all(b"\n"))
        .map_err(|e| AdbError::io(path, e))
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| AdbError::io(path, e))
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| AdbError::invalid(e.to_string()))?;
    write_text(path.as_ref(), &text)
}
