//! Adaptive spherical decision boundaries.
//!
//! Each known class `k` gets a centroid `c_k` (the mean of its frozen training
//! features) and a radius `softplus(delta_hat_k)`. The boundary loss is the
//! mean absolute gap between each sample's distance to its own centroid and
//! that class's radius, so at equilibrium a radius sits where as many of its
//! samples lie inside the ball as outside it.
//!
//! Updates follow the per-class gradient
//!
//! ```text
//! dL/d(delta_hat_k) = mean_{i in batch, y_i = k} (-1)^{outside_i} * sigmoid(delta_hat_k)
//! ```
//!
//! and classes absent from a mini-batch are skipped outright.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::adam::{AdamConfig, AdamState};
use crate::data_io::{EmbeddedDataset, LabelMap};
use crate::error::{AdbError, Result};
use crate::rng::{stream_rng, Stream};

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Derivative of [`softplus`].
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// One mean vector per known class together with the class sizes behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Centroids {
    pub centers: Vec<Vec<f64>>,
    pub counts: Vec<usize>,
}

impl Centroids {
    pub fn new(centers: Vec<Vec<f64>>, counts: Vec<usize>) -> Result<Self> {
        if centers.is_empty() {
            return Err(AdbError::invalid("at least one centroid is required"));
        }
        if centers.len() != counts.len() {
            return Err(AdbError::dim(centers.len(), counts.len()));
        }
        let dim = centers[0].len();
        if dim == 0 {
            return Err(AdbError::invalid(
                "centroids must have at least one component",
            ));
        }
        for c in &centers {
            if c.len() != dim {
                return Err(AdbError::dim(dim, c.len()));
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(AdbError::invalid("centroid has a non-finite component"));
            }
        }
        if counts.contains(&0) {
            return Err(AdbError::InsufficientData(
                "centroid built from zero records".into(),
            ));
        }
        Ok(Self { centers, counts })
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.centers[0].len()
    }
}

/// Mean feature vector of every known class over the whole training set.
pub fn compute_centroids(train: &EmbeddedDataset) -> Result<Centroids> {
    let k = train.num_classes();
    if k == 0 {
        return Err(AdbError::invalid("label map is empty"));
    }
    let mut sums = vec![vec![0.0; train.dim]; k];
    let mut counts = vec![0usize; k];
    for (z, y) in train.labelled()? {
        counts[y] += 1;
        for (s, v) in sums[y].iter_mut().zip(z) {
            *s += v;
        }
    }
    if let Some(empty) = counts.iter().position(|&n| n == 0) {
        return Err(AdbError::InsufficientData(format!(
            "class {:?} has no training records",
            train.label_map.names()[empty]
        )));
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        let n = n as f64;
        s.iter_mut().for_each(|v| *v /= n);
    }
    Centroids::new(sums, counts)
}

/// Unconstrained boundary parameters; radii are their softplus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryParams {
    pub delta_hat: Vec<f64>,
}

impl BoundaryParams {
    pub fn new(delta_hat: Vec<f64>) -> Self {
        Self { delta_hat }
    }

    /// Standard-normal draws under `seed`.
    pub fn init_standard_normal(k: usize, seed: u64) -> Self {
        let mut rng = stream_rng(seed, Stream::BoundaryInit);
        Self::new((0..k).map(|_| rng.sample(StandardNormal)).collect())
    }

    pub fn len(&self) -> usize {
        self.delta_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delta_hat.is_empty()
    }

    pub fn radius(&self, k: usize) -> f64 {
        softplus(self.delta_hat[k])
    }

    pub fn radii(&self) -> Vec<f64> {
        self.delta_hat.iter().map(|&d| softplus(d)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundaryTrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub convergence_tol: f64,
    pub patience: usize,
    pub seed: u64,
}

impl Default for BoundaryTrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            batch_size: 128,
            max_epochs: 100,
            convergence_tol: 1e-4,
            patience: 5,
            seed: 0,
        }
    }
}

impl BoundaryTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(AdbError::invalid("boundary learning_rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(AdbError::invalid("boundary batch_size must be at least 1"));
        }
        if self.max_epochs == 0 {
            return Err(AdbError::invalid("boundary max_epochs must be at least 1"));
        }
        if !(self.convergence_tol.is_finite() && self.convergence_tol >= 0.0) {
            return Err(AdbError::invalid("convergence_tol must be non-negative"));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig::with_learning_rate(self.learning_rate)
    }
}

/// Centroids plus learned radii: everything needed to classify or reject.
#[derive(Debug, Clone, PartialEq)]
pub struct AdbModel {
    pub centroids: Centroids,
    pub params: BoundaryParams,
    radii: Vec<f64>,
    pub label_map: LabelMap,
    pub dim: usize,
    pub config: BoundaryTrainConfig,
}

impl AdbModel {
    pub fn new(
        centroids: Centroids,
        params: BoundaryParams,
        label_map: LabelMap,
        config: BoundaryTrainConfig,
    ) -> Result<Self> {
        let k = label_map.len();
        if centroids.len() != k {
            return Err(AdbError::dim(k, centroids.len()));
        }
        if params.len() != k {
            return Err(AdbError::dim(k, params.len()));
        }
        if params.delta_hat.iter().any(|d| !d.is_finite()) {
            return Err(AdbError::invalid("boundary parameters must be finite"));
        }
        let radii = params.radii();
        if let Some(r) = radii.iter().find(|r| **r <= 0.0) {
            // softplus underflows to zero below about -745
            return Err(AdbError::invalid(format!("radius {r} is not positive")));
        }
        Ok(Self {
            dim: centroids.dim(),
            centroids,
            params,
            radii,
            label_map,
            config,
        })
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn num_classes(&self) -> usize {
        self.label_map.len()
    }

    pub fn mean_radius(&self) -> f64 {
        self.radii.iter().sum::<f64>() / self.radii.len() as f64
    }
}

/// A mini-batch of `(feature, class index)` pairs.
pub type Batch<'a> = [(&'a [f64], usize)];

fn check_batch(batch: &Batch<'_>, centroids: &Centroids, params: &BoundaryParams) -> Result<()> {
    if batch.is_empty() {
        return Err(AdbError::invalid("batch is empty"));
    }
    if params.len() != centroids.len() {
        return Err(AdbError::dim(centroids.len(), params.len()));
    }
    let dim = centroids.dim();
    for &(z, y) in batch {
        if y >= centroids.len() {
            return Err(AdbError::invalid(format!(
                "label index {y} out of range for {} classes",
                centroids.len()
            )));
        }
        if z.len() != dim {
            return Err(AdbError::dim(dim, z.len()));
        }
    }
    Ok(())
}

fn own_distances(batch: &Batch<'_>, centroids: &Centroids) -> Vec<(f64, usize)> {
    batch
        .iter()
        .map(|&(z, y)| (euclidean(z, &centroids.centers[y]), y))
        .collect()
}

fn loss_from_distances(dists: &[(f64, usize)], radii: &[f64]) -> f64 {
    let total: f64 = dists
        .iter()
        .map(|&(d, y)| {
            let r = radii[y];
            if d > r {
                d - r
            } else {
                r - d
            }
        })
        .sum();
    total / dists.len() as f64
}

/// Boundary loss averaged over the whole batch.
pub fn boundary_loss(
    batch: &Batch<'_>,
    centroids: &Centroids,
    params: &BoundaryParams,
) -> Result<f64> {
    check_batch(batch, centroids, params)?;
    Ok(loss_from_distances(
        &own_distances(batch, centroids),
        &params.radii(),
    ))
}

/// Sum over classes present in the batch of each class's mean absolute gap.
///
/// Its partial derivative in `delta_hat_k` is exactly [`boundary_gradient`]'s
/// entry `k`, which is what the finite-difference oracle differentiates.
pub fn per_class_boundary_loss(
    batch: &Batch<'_>,
    centroids: &Centroids,
    params: &BoundaryParams,
) -> Result<f64> {
    check_batch(batch, centroids, params)?;
    let k = centroids.len();
    let radii = params.radii();
    let mut sums = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for (d, y) in own_distances(batch, centroids) {
        sums[y] += (d - radii[y]).abs();
        counts[y] += 1;
    }
    Ok(sums
        .iter()
        .zip(&counts)
        .filter(|(_, &n)| n > 0)
        .map(|(s, &n)| s / n as f64)
        .sum())
}

fn gradient_from_distances(dists: &[(f64, usize)], delta_hat: &[f64]) -> Vec<Option<f64>> {
    let k = delta_hat.len();
    let mut signs = vec![0i64; k];
    let mut counts = vec![0i64; k];
    for &(d, y) in dists {
        let r = softplus(delta_hat[y]);
        // a sample exactly on its boundary counts as inside
        signs[y] += if d > r { -1 } else { 1 };
        counts[y] += 1;
    }
    (0..k)
        .map(|j| {
            (counts[j] > 0).then(|| signs[j] as f64 / counts[j] as f64 * sigmoid(delta_hat[j]))
        })
        .collect()
}

/// Per-class gradient of the boundary loss; `None` for classes absent from the batch.
pub fn boundary_gradient(
    batch: &Batch<'_>,
    centroids: &Centroids,
    params: &BoundaryParams,
) -> Result<Vec<Option<f64>>> {
    check_batch(batch, centroids, params)?;
    Ok(gradient_from_distances(
        &own_distances(batch, centroids),
        &params.delta_hat,
    ))
}

/// Central differences of [`per_class_boundary_loss`] in each present `delta_hat_k`.
pub fn finite_difference_loss_gradient(
    batch: &Batch<'_>,
    centroids: &Centroids,
    params: &BoundaryParams,
    h: f64,
) -> Result<Vec<Option<f64>>> {
    if !(h > 0.0 && h <= 1e-3) {
        return Err(AdbError::invalid(format!(
            "step must be in (0, 1e-3], got {h}"
        )));
    }
    check_batch(batch, centroids, params)?;
    let mut present = vec![false; centroids.len()];
    for &(_, y) in batch {
        present[y] = true;
    }
    let mut out = Vec::with_capacity(present.len());
    for (k, &p) in present.iter().enumerate() {
        if !p {
            out.push(None);
            continue;
        }
        let mut plus = params.clone();
        plus.delta_hat[k] += h;
        let mut minus = params.clone();
        minus.delta_hat[k] -= h;
        let up = per_class_boundary_loss(batch, centroids, &plus)?;
        let down = per_class_boundary_loss(batch, centroids, &minus)?;
        out.push(Some((up - down) / (2.0 * h)));
    }
    Ok(out)
}

/// One masked Adam update of the boundary parameters.
pub fn adam_step(
    params: &BoundaryParams,
    grads: &[Option<f64>],
    state: &AdamState,
    cfg: &AdamConfig,
) -> Result<(BoundaryParams, AdamState)> {
    if grads.len() != params.len() {
        return Err(AdbError::dim(params.len(), grads.len()));
    }
    if state.len() != params.len() {
        return Err(AdbError::dim(params.len(), state.len()));
    }
    let mask: Vec<bool> = grads.iter().map(Option::is_some).collect();
    let dense: Vec<f64> = grads.iter().map(|g| g.unwrap_or(0.0)).collect();
    let mut next = params.clone();
    let mut next_state = state.clone();
    next_state.update(cfg, &mut next.delta_hat, &dense, Some(&mask))?;
    Ok((next, next_state))
}

/// One row of the boundary learning curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub mean_radius: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryFit {
    pub model: AdbModel,
    /// Epoch 0 is the initialization; epoch `e` is the state after `e` passes.
    pub curve: Vec<CurvePoint>,
    pub converged: bool,
}

impl BoundaryFit {
    pub fn epochs_run(&self) -> usize {
        self.curve.last().map_or(0, |p| p.epoch)
    }
}

/// Learns one radius per class over frozen features and fixed centroids.
///
/// Stops once the largest per-epoch radius change stays below
/// `convergence_tol` for `patience` consecutive epochs, or at `max_epochs`.
pub fn train_boundaries(
    train: &EmbeddedDataset,
    centroids: &Centroids,
    cfg: &BoundaryTrainConfig,
) -> Result<BoundaryFit> {
    cfg.validate()?;
    train.ensure_training_ready()?;
    if centroids.len() != train.num_classes() {
        return Err(AdbError::dim(train.num_classes(), centroids.len()));
    }
    if centroids.dim() != train.dim {
        return Err(AdbError::dim(centroids.dim(), train.dim));
    }
    let k = centroids.len();
    let adam = cfg.adam();
    let dists = own_distances(&train.labelled()?, centroids);

    let mut params = BoundaryParams::init_standard_normal(k, cfg.seed);
    let mut state = AdamState::new(k);
    let mut shuffle_rng = stream_rng(cfg.seed, Stream::BoundaryShuffle);
    let mut order: Vec<usize> = (0..dists.len()).collect();
    let mut batch = Vec::with_capacity(cfg.batch_size);

    let snapshot = |epoch: usize, radii: &[f64]| CurvePoint {
        epoch,
        mean_radius: radii.iter().sum::<f64>() / k as f64,
        loss: loss_from_distances(&dists, radii),
    };
    let mut prev_radii = params.radii();
    let mut curve = vec![snapshot(0, &prev_radii)];
    let mut stable = 0;
    let mut converged = false;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| dists[i]));
            let grads = gradient_from_distances(&batch, &params.delta_hat);
            let mask: Vec<bool> = grads.iter().map(Option::is_some).collect();
            let dense: Vec<f64> = grads.iter().map(|g| g.unwrap_or(0.0)).collect();
            state.update(&adam, &mut params.delta_hat, &dense, Some(&mask))?;
        }
        let radii = params.radii();
        let change = radii
            .iter()
            .zip(&prev_radii)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        curve.push(snapshot(epoch, &radii));
        log::debug!("boundary epoch {epoch}: max radius change {change:.3e}");
        prev_radii = radii;
        if change < cfg.convergence_tol {
            stable += 1;
            if stable >= cfg.patience {
                converged = true;
                break;
            }
        } else {
            stable = 0;
        }
    }

    let model = AdbModel::new(centroids.clone(), params, train.label_map.clone(), *cfg)?;
    Ok(BoundaryFit {
        model,
        curve,
        converged,
    })
}

pub fn write_curve_csv<W: Write>(curve: &[CurvePoint], mut w: W) -> std::io::Result<()> {
    writeln!(w, "epoch,mean_radius,loss")?;
    for p in curve {
        writeln!(w, "{},{},{}", p.epoch, p.mean_radius, p.loss)?;
    }
    w.flush()
}

pub fn save_curve_csv(curve: &[CurvePoint], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| AdbError::io(path, e))?;
    write_curve_csv(curve, std::io::BufWriter::new(file)).map_err(|e| AdbError::io(path, e))
}
