//! Streamline classifier: preprocessing, a small 1-D CNN trained with Adam
//! on class-balanced batches, cross-validation and prediction.

mod adam;
mod batches;
pub mod checkpoint;
mod model;
mod train;

use rayon::prelude::*;

pub use adam::{Adam, AdamParams};
pub use batches::balanced_batches;
pub use model::{sigmoid, softmax, Activations, Architecture, BatchDropout, Block, Dropout, Model, Shapes};
pub use train::{
    select_fold, stratified_folds, train, train_cv, Classifier, CvOutcome, FoldResult, Metrics, TrainConfig,
};

use crate::error::Result;
use crate::tractogram::{resample, NormalizationRecord, Streamline};

/// Resample to `n_points`, normalize to [-1, 1] and interleave as
/// `x1, y1, z1, x2, …`.
pub fn preprocess(streamline: &Streamline, record: &NormalizationRecord, n_points: usize) -> Result<Vec<f64>> {
    let r = resample(streamline, n_points)?;
    Ok(r.points()
        .iter()
        .flat_map(|p| {
            let q = record.apply(p);
            [q.x, q.y, q.z]
        })
        .collect())
}

/// Class decision: `score >= threshold` for a single sigmoid output,
/// otherwise the first index of the largest probability.
pub fn label_for_scores(scores: &[f64], threshold: f64) -> usize {
    if scores.len() == 1 {
        return usize::from(scores[0] >= threshold);
    }
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub scores: Vec<f64>,
    pub label: usize,
    /// Dense-layer activations feeding the output layer.
    pub embedding: Vec<f64>,
}

/// Evaluation-mode inference, parallel over samples.
pub fn predict(model: &Model, features: &[Vec<f64>], threshold: f64) -> Result<Vec<Prediction>> {
    features
        .par_iter()
        .map(|x| {
            let act = model.forward(x, Dropout::Off)?;
            Ok(Prediction {
                label: label_for_scores(&act.output, threshold),
                scores: act.output,
                embedding: act.dense,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_boundary_is_positive() {
        assert_eq!(label_for_scores(&[0.5], 0.5), 1);
        assert_eq!(label_for_scores(&[0.4999999], 0.5), 0);
        assert_eq!(label_for_scores(&[0.19], 0.2), 0);
    }

    #[test]
    fn argmax_ties_take_lowest_index() {
        assert_eq!(label_for_scores(&[0.2, 0.4, 0.4], 0.5), 1);
        let probs = softmax(&[1.5, 1.5, 1.5]);
        assert_eq!(label_for_scores(&probs, 0.5), 0);
    }

    #[test]
    fn preprocess_interleaves() {
        let pts: Vec<[f64; 3]> = (0..22).map(|i| [i as f64 / 21.0 * 2.0 - 1.0, 0.5, -0.25]).collect();
        let s = Streamline::from_coords(&pts).unwrap();
        let record = NormalizationRecord { min: [-1.0; 3], max: [1.0; 3] };
        let f = preprocess(&s, &record, 22).unwrap();
        assert_eq!(f.len(), 66);
        for (i, p) in pts.iter().enumerate() {
            for a in 0..3 {
                assert!((f[3 * i + a] - p[a]).abs() < 1e-12);
            }
        }
    }
}
