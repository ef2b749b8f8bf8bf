//! Open classification with learned boundaries, and the max-softmax baseline.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boundary::{euclidean, AdbModel};
use crate::data_io::{EmbeddedDataset, LabelMap, OPEN_LABEL};
use crate::error::{AdbError, Result};
use crate::representation::{argmax, rep_forward, RepresentationModel};

/// Default confidence threshold of the max-softmax baseline.
pub const MSP_THRESHOLD: f64 = 0.5;

/// Outcome for one input.
///
/// For boundary predictions `distance` is the Euclidean distance to the
/// nearest centroid and `margin` is that distance minus the nearest radius.
/// For max-softmax predictions `distance` is `1 - max_prob` and `margin` is
/// `threshold - max_prob`. Either way a positive margin accompanies every
/// open label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: String,
    pub nearest_class: String,
    pub distance: f64,
    pub margin: f64,
}

impl Prediction {
    pub fn is_open(&self) -> bool {
        self.label == OPEN_LABEL
    }
}

pub fn classify(model: &AdbModel, z: &[f64]) -> Result<Prediction> {
    classify_scaled(model, z, 1.0)
}

/// [`classify`] with every radius multiplied by `radius_scale`.
pub fn classify_scaled(model: &AdbModel, z: &[f64], radius_scale: f64) -> Result<Prediction> {
    if z.len() != model.dim {
        return Err(AdbError::dim(model.dim, z.len()));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(AdbError::invalid(
            "feature vector has a non-finite component",
        ));
    }
    let radii = model.radii();
    let mut nearest = 0;
    let mut nearest_dist = f64::INFINITY;
    let mut inside_any = false;
    for (k, c) in model.centroids.centers.iter().enumerate() {
        let d = euclidean(z, c);
        if d <= radii[k] * radius_scale {
            inside_any = true;
        }
        if d < nearest_dist {
            nearest = k;
            nearest_dist = d;
        }
    }
    let nearest_class = model.label_map.names()[nearest].clone();
    let label = if inside_any {
        nearest_class.clone()
    } else {
        OPEN_LABEL.to_string()
    };
    Ok(Prediction {
        label,
        nearest_class,
        distance: nearest_dist,
        margin: nearest_dist - radii[nearest] * radius_scale,
    })
}

pub fn classify_batch(model: &AdbModel, data: &EmbeddedDataset) -> Result<Vec<Prediction>> {
    classify_batch_scaled(model, data, 1.0)
}

pub fn classify_batch_scaled(
    model: &AdbModel,
    data: &EmbeddedDataset,
    radius_scale: f64,
) -> Result<Vec<Prediction>> {
    if !data.is_empty() && data.dim != model.dim {
        return Err(AdbError::dim(model.dim, data.dim));
    }
    data.records
        .par_iter()
        .map(|r| classify_scaled(model, &r.vector, radius_scale))
        .collect()
}

/// Rejects as open when the top probability is strictly below `threshold`.
pub fn msp_classify(probs: &[f64], threshold: f64, label_map: &LabelMap) -> Result<Prediction> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(AdbError::invalid(format!(
            "threshold must be in (0, 1), got {threshold}"
        )));
    }
    if probs.len() != label_map.len() || probs.is_empty() {
        return Err(AdbError::dim(label_map.len(), probs.len()));
    }
    if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(AdbError::invalid(
            "probabilities must be finite and non-negative",
        ));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(AdbError::invalid(format!(
            "probabilities sum to {total}, not 1"
        )));
    }
    let best = argmax(probs);
    let top = probs[best];
    let nearest_class = label_map.names()[best].clone();
    let label = if top < threshold {
        OPEN_LABEL.to_string()
    } else {
        nearest_class.clone()
    };
    Ok(Prediction {
        label,
        nearest_class,
        distance: 1.0 - top,
        margin: threshold - top,
    })
}

/// Max-softmax predictions for raw (pre-representation) inputs.
pub fn msp_classify_batch(
    model: &RepresentationModel,
    data: &EmbeddedDataset,
    threshold: f64,
) -> Result<Vec<Prediction>> {
    if !data.is_empty() && data.dim != model.d_in() {
        return Err(AdbError::dim(model.d_in(), data.dim));
    }
    data.records
        .par_iter()
        .map(|r| {
            msp_classify(
                &rep_forward(model, &r.vector)?.probs,
                threshold,
                &model.label_map,
            )
        })
        .collect()
}

/// `index,gold,pred,nearest,distance,margin`
pub fn write_predictions_csv<W: Write>(
    preds: &[Prediction],
    golds: &[String],
    writer: W,
) -> Result<()> {
    if preds.len() != golds.len() {
        return Err(AdbError::dim(golds.len(), preds.len()));
    }
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| AdbError::invalid(format!("writing predictions: {e}"));
    w.write_record(["index", "gold", "pred", "nearest", "distance", "margin"])
        .map_err(io)?;
    for (i, (p, g)) in preds.iter().zip(golds).enumerate() {
        w.write_record([
            i.to_string(),
            g.clone(),
            p.label.clone(),
            p.nearest_class.clone(),
            p.distance.to_string(),
            p.margin.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| AdbError::io("<predictions>", e))
}

pub fn save_predictions_csv(
    preds: &[Prediction],
    golds: &[String],
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| AdbError::io(path, e))?;
    write_predictions_csv(preds, golds, std::io::BufWriter::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::{BoundaryParams, BoundaryTrainConfig, Centroids};
    use crate::data_io::EmbeddingRecord;

    /// delta_hat whose softplus is `r`.
    fn inv_softplus(r: f64) -> f64 {
        r.exp_m1().ln()
    }

    fn two_class_model(r1: f64, r2: f64) -> AdbModel {
        AdbModel::new(
            Centroids::new(vec![vec![0.0, 0.0], vec![10.0, 0.0]], vec![1, 1]).unwrap(),
            BoundaryParams::new(vec![inv_softplus(r1), inv_softplus(r2)]),
            LabelMap::new(vec!["a".into(), "b".into()]).unwrap(),
            BoundaryTrainConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn centroid_classifies_as_itself() {
        let m = two_class_model(1.0, 1.0);
        let p = classify(&m, &[10.0, 0.0]).unwrap();
        assert_eq!(p.label, "b");
        assert_eq!(p.distance, 0.0);
        assert!(p.margin < 0.0);
    }

    #[test]
    fn midpoint_is_open() {
        let m = two_class_model(1.0, 1.0);
        let p = classify(&m, &[5.0, 0.0]).unwrap();
        assert_eq!(p.label, OPEN_LABEL);
        assert_eq!(p.nearest_class, "a");
        assert_eq!(p.distance, 5.0);
        assert!(p.margin > 0.0);
    }

    #[test]
    fn boundary_point_is_known() {
        let m = two_class_model(1.0, 1.0);
        let r = m.radii()[0];
        assert_eq!(classify(&m, &[-r, 0.0]).unwrap().label, "a");
    }

    #[test]
    fn argmin_over_all_classes() {
        // inside b's large ball only, but nearer to a's centroid
        let m = two_class_model(0.5, 8.0);
        let p = classify(&m, &[4.0, 0.0]).unwrap();
        assert_eq!(p.label, "a");
    }

    #[test]
    fn dimension_checked() {
        let m = two_class_model(1.0, 1.0);
        assert!(classify(&m, &[1.0]).is_err());
    }

    #[test]
    fn batch_matches_singles() {
        let m = two_class_model(1.0, 2.0);
        let d = EmbeddedDataset::new(
            vec![
                EmbeddingRecord::new("a", vec![0.5, 0.0]),
                EmbeddingRecord::new("open", vec![5.0, 5.0]),
                EmbeddingRecord::new("b", vec![9.0, 1.0]),
            ],
            m.label_map.clone(),
            2,
        )
        .unwrap();
        let batch = classify_batch(&m, &d).unwrap();
        assert_eq!(batch.len(), 3);
        for (p, r) in batch.iter().zip(&d.records) {
            assert_eq!(*p, classify(&m, &r.vector).unwrap());
        }
        let empty = EmbeddedDataset::new(vec![], m.label_map.clone(), 2).unwrap();
        assert!(classify_batch(&m, &empty).unwrap().is_empty());
    }

    #[test]
    fn msp_examples() {
        let two = LabelMap::new(vec!["x".into(), "y".into()]).unwrap();
        assert_eq!(msp_classify(&[0.9, 0.1], 0.5, &two).unwrap().label, "x");
        assert_eq!(msp_classify(&[0.5, 0.5], 0.5, &two).unwrap().label, "x");
        let four = LabelMap::new((0..4).map(|i| i.to_string()).collect()).unwrap();
        assert_eq!(
            msp_classify(&[0.25; 4], 0.5, &four).unwrap().label,
            OPEN_LABEL
        );
        assert!(msp_classify(&[0.7, 0.7], 0.5, &two).is_err());
        assert!(msp_classify(&[0.9, 0.1], 1.0, &two).is_err());
        assert!(msp_classify(&[1.0], 0.5, &two).is_err());
    }
}
