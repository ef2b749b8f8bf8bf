//! Feature pre-training: one dense rectifier layer followed by a linear
//! softmax classifier over the known classes, trained with mean
//! cross-entropy. After training, the rectified hidden activations `z` are
//! the frozen features that boundaries are learned on.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::adam::{AdamConfig, AdamState};
use crate::data_io::{EmbeddedDataset, EmbeddingRecord, LabelMap};
use crate::error::{AdbError, Result};
use crate::rng::{stream_rng, Stream};

/// Probabilities are clamped to this before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let cols = rows.first().map_or(0, Vec::len);
        if n == 0 || cols == 0 {
            return Err(AdbError::invalid("matrix must be non-empty"));
        }
        let mut data = Vec::with_capacity(n * cols);
        for r in rows {
            if r.len() != cols {
                return Err(AdbError::dim(cols, r.len()));
            }
            data.extend(r);
        }
        Ok(Self {
            rows: n,
            cols,
            data,
        })
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.cols).map(<[f64]>::to_vec).collect()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// `self * x + bias`
    fn affine(&self, x: &[f64], bias: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + bias[i])
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RepTrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub early_stop_patience: usize,
    /// Width of the dense layer; `None` keeps the input width.
    pub hidden_dim: Option<usize>,
}

impl Default for RepTrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 128,
            max_epochs: 100,
            seed: 0,
            early_stop_patience: 10,
            hidden_dim: None,
        }
    }
}

impl RepTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(AdbError::invalid(
                "representation learning_rate must be positive",
            ));
        }
        if self.batch_size == 0 {
            return Err(AdbError::invalid(
                "representation batch_size must be at least 1",
            ));
        }
        if self.max_epochs == 0 {
            return Err(AdbError::invalid(
                "representation max_epochs must be at least 1",
            ));
        }
        if self.hidden_dim == Some(0) {
            return Err(AdbError::invalid("hidden_dim must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationModel {
    /// `d_out x d_in`
    pub w_h: Matrix,
    pub b_h: Vec<f64>,
    /// `k x d_out`
    pub w_phi: Matrix,
    pub b_phi: Vec<f64>,
    pub label_map: LabelMap,
    pub config: RepTrainConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub z: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

/// Gradients with the same shapes as the model's four tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct RepGradients {
    pub w_h: Matrix,
    pub b_h: Vec<f64>,
    pub w_phi: Matrix,
    pub b_phi: Vec<f64>,
}

impl RepresentationModel {
    pub fn from_parts(
        w_h: Vec<Vec<f64>>,
        b_h: Vec<f64>,
        w_phi: Vec<Vec<f64>>,
        b_phi: Vec<f64>,
        label_map: LabelMap,
        config: RepTrainConfig,
    ) -> Result<Self> {
        Self::from_matrices(
            Matrix::from_rows(w_h)?,
            b_h,
            Matrix::from_rows(w_phi)?,
            b_phi,
            label_map,
            config,
        )
    }

    pub fn from_matrices(
        w_h: Matrix,
        b_h: Vec<f64>,
        w_phi: Matrix,
        b_phi: Vec<f64>,
        label_map: LabelMap,
        config: RepTrainConfig,
    ) -> Result<Self> {
        if b_h.len() != w_h.rows {
            return Err(AdbError::dim(w_h.rows, b_h.len()));
        }
        if w_phi.cols != w_h.rows {
            return Err(AdbError::dim(w_h.rows, w_phi.cols));
        }
        if b_phi.len() != w_phi.rows {
            return Err(AdbError::dim(w_phi.rows, b_phi.len()));
        }
        if w_phi.rows != label_map.len() {
            return Err(AdbError::dim(label_map.len(), w_phi.rows));
        }
        let all = w_h.data.iter().chain(&b_h).chain(&w_phi.data).chain(&b_phi);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(AdbError::invalid(
                "representation parameters must be finite",
            ));
        }
        Ok(Self {
            w_h,
            b_h,
            w_phi,
            b_phi,
            label_map,
            config,
        })
    }

    /// Symmetric uniform init, `a = sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn init(
        d_in: usize,
        d_out: usize,
        label_map: LabelMap,
        config: RepTrainConfig,
    ) -> Result<Self> {
        let k = label_map.len();
        if d_in == 0 || d_out == 0 || k == 0 {
            return Err(AdbError::invalid(
                "representation dimensions must be positive",
            ));
        }
        let mut rng = stream_rng(config.seed, Stream::RepresentationInit);
        let mut uniform = |rows: usize, cols: usize| {
            let a = (6.0 / (rows + cols) as f64).sqrt();
            Matrix {
                rows,
                cols,
                data: (0..rows * cols).map(|_| rng.random_range(-a..=a)).collect(),
            }
        };
        let w_h = uniform(d_out, d_in);
        let w_phi = uniform(k, d_out);
        Self::from_matrices(
            w_h,
            vec![0.0; d_out],
            w_phi,
            vec![0.0; k],
            label_map,
            config,
        )
    }

    pub fn d_in(&self) -> usize {
        self.w_h.cols
    }

    pub fn d_out(&self) -> usize {
        self.w_h.rows
    }

    pub fn num_classes(&self) -> usize {
        self.w_phi.rows
    }

    /// Plain gradient descent step, `param -= lr * grad`.
    pub fn apply_gradient(&mut self, grads: &RepGradients, lr: f64) {
        let pairs: [(&mut [f64], &[f64]); 4] = [
            (&mut self.w_h.data, &grads.w_h.data),
            (&mut self.b_h, &grads.b_h),
            (&mut self.w_phi.data, &grads.w_phi.data),
            (&mut self.b_phi, &grads.b_phi),
        ];
        for (p, g) in pairs {
            p.iter_mut().zip(g).for_each(|(p, g)| *p -= lr * g);
        }
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn rep_forward(model: &RepresentationModel, x: &[f64]) -> Result<Forward> {
    if x.len() != model.d_in() {
        return Err(AdbError::dim(model.d_in(), x.len()));
    }
    let pre = model.w_h.affine(x, &model.b_h);
    let z: Vec<f64> = pre.iter().map(|a| a.max(0.0)).collect();
    let logits = model.w_phi.affine(&z, &model.b_phi);
    let probs = softmax(&logits);
    Ok(Forward { z, logits, probs })
}

pub fn cross_entropy(probs: &[f64], label: usize) -> Result<f64> {
    let p = probs.get(label).ok_or_else(|| {
        AdbError::invalid(format!(
            "label index {label} out of range for {} classes",
            probs.len()
        ))
    })?;
    Ok(-p.max(PROB_FLOOR).ln())
}

/// Mean cross-entropy over `(x, class index)` pairs.
pub fn mean_cross_entropy(model: &RepresentationModel, batch: &[(&[f64], usize)]) -> Result<f64> {
    if batch.is_empty() {
        return Err(AdbError::invalid("batch is empty"));
    }
    let mut total = 0.0;
    for &(x, y) in batch {
        total += cross_entropy(&rep_forward(model, x)?.probs, y)?;
    }
    Ok(total / batch.len() as f64)
}

/// Mean cross-entropy and its analytic gradient with respect to every parameter.
pub fn loss_and_gradients(
    model: &RepresentationModel,
    batch: &[(&[f64], usize)],
) -> Result<(f64, RepGradients)> {
    if batch.is_empty() {
        return Err(AdbError::invalid("batch is empty"));
    }
    let (d_in, d_out, k) = (model.d_in(), model.d_out(), model.num_classes());
    let mut g = RepGradients {
        w_h: Matrix::zeros(d_out, d_in),
        b_h: vec![0.0; d_out],
        w_phi: Matrix::zeros(k, d_out),
        b_phi: vec![0.0; k],
    };
    let n = batch.len() as f64;
    let mut total = 0.0;
    let mut d_logits = vec![0.0; k];
    let mut d_pre = vec![0.0; d_out];
    for &(x, y) in batch {
        let fwd = rep_forward(model, x)?;
        total += cross_entropy(&fwd.probs, y)?;
        if fwd.probs[y] < PROB_FLOOR {
            // clamped: the loss is flat in every parameter here
            continue;
        }
        for (j, d) in d_logits.iter_mut().enumerate() {
            *d = (fwd.probs[j] - if j == y { 1.0 } else { 0.0 }) / n;
        }
        for (j, &dl) in d_logits.iter().enumerate() {
            g.b_phi[j] += dl;
            let row = &mut g.w_phi.data[j * d_out..(j + 1) * d_out];
            row.iter_mut().zip(&fwd.z).for_each(|(w, z)| *w += dl * z);
        }
        for (h, dp) in d_pre.iter_mut().enumerate() {
            *dp = if fwd.z[h] > 0.0 {
                (0..k)
                    .map(|j| model.w_phi.data[j * d_out + h] * d_logits[j])
                    .sum()
            } else {
                0.0
            };
        }
        for (h, &dp) in d_pre.iter().enumerate() {
            g.b_h[h] += dp;
            let row = &mut g.w_h.data[h * d_in..(h + 1) * d_in];
            row.iter_mut().zip(x).for_each(|(w, v)| *w += dp * v);
        }
    }
    Ok((total / n, g))
}

/// Index of the largest probability, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn accuracy(model: &RepresentationModel, data: &[(&[f64], usize)]) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for &(x, y) in data {
        if argmax(&rep_forward(model, x)?.logits) == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Result of pre-training: the best-validation parameters plus per-epoch history.
#[derive(Debug, Clone, PartialEq)]
pub struct RepFit {
    pub model: RepresentationModel,
    pub best_epoch: usize,
    pub val_accuracy: Vec<f64>,
}

/// Mini-batch Adam on mean cross-entropy, keeping the parameters with the best
/// validation accuracy and stopping after `early_stop_patience` epochs without
/// improvement. With an empty validation set, training accuracy is tracked instead.
pub fn train_representation(
    train: &EmbeddedDataset,
    val: &EmbeddedDataset,
    cfg: &RepTrainConfig,
) -> Result<RepFit> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(AdbError::invalid("training set is empty"));
    }
    train.ensure_training_ready()?;
    if !val.is_empty() && val.dim != train.dim {
        return Err(AdbError::dim(train.dim, val.dim));
    }
    if val.label_map != train.label_map && !val.is_empty() {
        return Err(AdbError::invalid(
            "validation label map differs from training",
        ));
    }
    let d_out = cfg.hidden_dim.unwrap_or(train.dim);
    let mut model = RepresentationModel::init(train.dim, d_out, train.label_map.clone(), *cfg)?;
    let train_pairs = train.labelled()?;
    let val_pairs = if val.is_empty() {
        train_pairs.clone()
    } else {
        val.labelled()?
    };

    let adam = AdamConfig::with_learning_rate(cfg.learning_rate);
    let mut states = [
        AdamState::new(model.w_h.data.len()),
        AdamState::new(model.b_h.len()),
        AdamState::new(model.w_phi.data.len()),
        AdamState::new(model.b_phi.len()),
    ];
    let mut rng = stream_rng(cfg.seed, Stream::RepresentationShuffle);
    let mut order: Vec<usize> = (0..train_pairs.len()).collect();
    let mut batch = Vec::with_capacity(cfg.batch_size);

    let mut best = model.clone();
    let mut best_acc = accuracy(&model, &val_pairs)?;
    let mut best_epoch = 0;
    let mut history = vec![best_acc];
    let mut since_best = 0;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| train_pairs[i]));
            let (_, g) = loss_and_gradients(&model, &batch)?;
            states[0].update(&adam, &mut model.w_h.data, &g.w_h.data, None)?;
            states[1].update(&adam, &mut model.b_h, &g.b_h, None)?;
            states[2].update(&adam, &mut model.w_phi.data, &g.w_phi.data, None)?;
            states[3].update(&adam, &mut model.b_phi, &g.b_phi, None)?;
        }
        let acc = accuracy(&model, &val_pairs)?;
        history.push(acc);
        log::debug!("representation epoch {epoch}: validation accuracy {acc:.4}");
        if acc > best_acc {
            best_acc = acc;
            best = model.clone();
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > cfg.early_stop_patience {
                break;
            }
        }
    }
    Ok(RepFit {
        model: best,
        best_epoch,
        val_accuracy: history,
    })
}

/// Replaces every record's vector by its rectified hidden representation.
pub fn embed_dataset(
    model: &RepresentationModel,
    data: &EmbeddedDataset,
) -> Result<EmbeddedDataset> {
    if data.dim != model.d_in() {
        return Err(AdbError::dim(model.d_in(), data.dim));
    }
    let records = data
        .records
        .iter()
        .map(|r| {
            Ok(EmbeddingRecord::new(
                r.label.clone(),
                rep_forward(model, &r.vector)?.z,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    EmbeddedDataset::new(records, data.label_map.clone(), model.d_out())
}
