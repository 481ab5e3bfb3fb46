use log::{debug, info};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamParams};
use super::batches::balanced_batches;
use super::model::{Architecture, BatchDropout, Dropout, Model};
use crate::error::{Error, Result};
use crate::rng::{rng_for, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub n_points: usize,
    /// Defaults to 50 for two classes and 60 otherwise.
    pub batch_size: Option<usize>,
    pub epochs: usize,
    pub folds: usize,
    pub dropout: f64,
    pub conv1_filters: usize,
    pub conv2_filters: usize,
    pub dense_units: usize,
    pub adam: AdamParams,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_points: 22,
            batch_size: None,
            epochs: 5,
            folds: 5,
            dropout: 0.5,
            conv1_filters: 16,
            conv2_filters: 32,
            dense_units: 128,
            adam: AdamParams::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn batch_size_for(&self, n_classes: usize) -> usize {
        self.batch_size.unwrap_or(if n_classes == 2 { 50 } else { 60 })
    }

    pub fn architecture(&self, n_classes: usize) -> Architecture {
        Architecture {
            input_len: 3 * self.n_points,
            conv1_filters: self.conv1_filters,
            conv1_kernel: 5,
            conv2_filters: self.conv2_filters,
            conv2_kernel: 3,
            dense_units: self.dense_units,
            outputs: if n_classes == 2 { 1 } else { n_classes },
        }
    }

    pub fn validate(&self, n_classes: usize) -> Result<()> {
        if n_classes < 2 {
            return Err(Error::InvalidArgument("training needs at least 2 classes".into()));
        }
        let batch = self.batch_size_for(n_classes);
        if batch == 0 || !batch.is_multiple_of(n_classes) {
            return Err(Error::InvalidArgument(format!(
                "batch size {batch} is not a positive multiple of {n_classes}"
            )));
        }
        if self.epochs == 0 || self.folds < 2 {
            return Err(Error::InvalidArgument("need epochs >= 1 and folds >= 2".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        self.architecture(n_classes).shapes()?;
        Ok(())
    }
}

/// A network plus the optimizer state it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub model: Model,
    pub optimizer: Adam,
    pub epoch_losses: Vec<f64>,
}

/// Train one model from scratch on `(features, labels)`.
pub fn train(
    features: &[Vec<f64>],
    labels: &[usize],
    n_classes: usize,
    config: &TrainConfig,
    rng: &mut Rng,
) -> Result<Classifier> {
    config.validate(n_classes)?;
    if features.len() != labels.len() {
        return Err(Error::ShapeMismatch("features and labels differ in length".into()));
    }
    let mut model = Model::init(config.architecture(n_classes), rng)?;
    model.dropout_rate = config.dropout;
    let mut optimizer = Adam::new(model.params().len(), config.adam);
    let batch_size = config.batch_size_for(n_classes);
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let batches = balanced_batches(labels, n_classes, batch_size, rng)?;
        let mut total = 0.0;
        for batch in &batches {
            let xs: Vec<&[f64]> = batch.iter().map(|&i| features[i].as_slice()).collect();
            let ys: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let (loss, grad) = model.loss_and_grad(&xs, &ys, BatchDropout::Sample(rng))?;
            optimizer.step(model.params_mut(), &grad)?;
            total += loss;
        }
        let mean = total / batches.len() as f64;
        debug!("epoch {epoch}: {} batches, mean loss {mean:.5}", batches.len());
        epoch_losses.push(mean);
    }
    Ok(Classifier { model, optimizer, epoch_losses })
}

/// Validation metrics of one fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub accuracy: f64,
    /// Recall per class; for two classes, index 1 is sensitivity and index 0
    /// specificity.
    pub recalls: Vec<f64>,
    /// `confusion[predicted][truth]`.
    pub confusion: Vec<Vec<usize>>,
}

impl Metrics {
    pub fn from_predictions(truth: &[usize], predicted: &[usize], n_classes: usize) -> Result<Metrics> {
        if truth.len() != predicted.len() {
            return Err(Error::ShapeMismatch("truth and predictions differ in length".into()));
        }
        let mut confusion = vec![vec![0usize; n_classes]; n_classes];
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= n_classes || p >= n_classes {
                return Err(Error::InvalidArgument(format!("class index out of range for {n_classes} classes")));
            }
            confusion[p][t] += 1;
        }
        let correct: usize = (0..n_classes).map(|c| confusion[c][c]).sum();
        let recalls = (0..n_classes)
            .map(|c| {
                let support: usize = (0..n_classes).map(|p| confusion[p][c]).sum();
                if support == 0 {
                    f64::NAN
                } else {
                    confusion[c][c] as f64 / support as f64
                }
            })
            .collect();
        let n = truth.len();
        let accuracy = if n == 0 { f64::NAN } else { correct as f64 / n as f64 };
        Ok(Metrics { n, accuracy, recalls, confusion })
    }

    pub fn sensitivity(&self) -> Option<f64> {
        (self.recalls.len() == 2).then(|| self.recalls[1])
    }

    pub fn specificity(&self) -> Option<f64> {
        (self.recalls.len() == 2).then(|| self.recalls[0])
    }

    /// |sensitivity − specificity| for two classes; the spread between the
    /// best and worst class recall otherwise.
    pub fn balance_gap(&self) -> f64 {
        let max = self.recalls.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = self.recalls.iter().copied().fold(f64::INFINITY, f64::min);
        max - min
    }
}

/// Stratified fold assignment: each class is shuffled and dealt round-robin,
/// continuing the deal across classes so fold sizes differ by at most one.
pub fn stratified_folds(labels: &[usize], n_classes: usize, k: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::InvalidArgument("need at least 2 folds".into()));
    }
    let mut members = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        members
            .get_mut(l)
            .ok_or_else(|| Error::InvalidArgument(format!("label {l} out of range")))?
            .push(i);
    }
    let mut fold_of = vec![0; labels.len()];
    let mut deal = 0;
    for (class, m) in members.iter_mut().enumerate() {
        if m.len() < k {
            let fold = m.len();
            return Err(Error::MissingClassInFold { fold, class });
        }
        m.shuffle(rng);
        for &i in m.iter() {
            fold_of[i] = deal % k;
            deal += 1;
        }
    }
    Ok(fold_of)
}

#[derive(Debug, Clone)]
pub struct FoldResult {
    pub classifier: Classifier,
    pub metrics: Metrics,
}

#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub fold_of: Vec<usize>,
    pub folds: Vec<FoldResult>,
    pub selected: usize,
}

impl CvOutcome {
    pub fn selected_classifier(&self) -> &Classifier {
        &self.folds[self.selected].classifier
    }

    pub fn mean_accuracy(&self) -> f64 {
        self.folds.iter().map(|f| f.metrics.accuracy).sum::<f64>() / self.folds.len() as f64
    }
}

/// Pick the fold with the smallest balance gap; ties go to higher accuracy,
/// then to the lower fold index.
pub fn select_fold(metrics: &[Metrics]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, m) in metrics.iter().enumerate() {
        let better = match best {
            None => true,
            Some(b) => {
                let (g, gb) = (m.balance_gap(), metrics[b].balance_gap());
                g < gb || (g == gb && m.accuracy > metrics[b].accuracy)
            }
        };
        if better {
            best = Some(i);
        }
    }
    best
}

/// Stratified k-fold cross-validation with model selection.
pub fn train_cv(features: &[Vec<f64>], labels: &[usize], n_classes: usize, config: &TrainConfig) -> Result<CvOutcome> {
    config.validate(n_classes)?;
    let fold_of = stratified_folds(labels, n_classes, config.folds, &mut rng_for(config.seed, &[0]))?;
    let mut folds = Vec::with_capacity(config.folds);
    for fold in 0..config.folds {
        let (mut train_x, mut train_y, mut val_x, mut val_y) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (i, &f) in fold_of.iter().enumerate() {
            if f == fold {
                val_x.push(features[i].clone());
                val_y.push(labels[i]);
            } else {
                train_x.push(features[i].clone());
                train_y.push(labels[i]);
            }
        }
        for class in 0..n_classes {
            if !val_y.contains(&class) || !train_y.contains(&class) {
                return Err(Error::MissingClassInFold { fold, class });
            }
        }
        let mut rng = rng_for(config.seed, &[1, fold as u64]);
        let classifier = train(&train_x, &train_y, n_classes, config, &mut rng)?;
        let predicted: Vec<usize> = val_x
            .iter()
            .map(|x| {
                let act = classifier.model.forward(x, Dropout::Off)?;
                Ok(super::label_for_scores(&act.output, 0.5))
            })
            .collect::<Result<_>>()?;
        let metrics = Metrics::from_predictions(&val_y, &predicted, n_classes)?;
        info!(
            "fold {fold}: accuracy {:.4}, recalls {:?}",
            metrics.accuracy, metrics.recalls
        );
        folds.push(FoldResult { classifier, metrics });
    }
    let metrics: Vec<Metrics> = folds.iter().map(|f| f.metrics.clone()).collect();
    let selected = select_fold(&metrics).expect("at least two folds");
    Ok(CvOutcome { fold_of, folds, selected })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_built_confusion() {
        // 8 positives (6 found), 12 negatives (9 rejected).
        let mut truth = vec![1; 8];
        truth.extend(vec![0; 12]);
        let mut pred = vec![1, 1, 1, 1, 1, 1, 0, 0];
        pred.extend(vec![0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1]);
        let m = Metrics::from_predictions(&truth, &pred, 2).unwrap();
        assert_eq!(m.sensitivity(), Some(6.0 / 8.0));
        assert_eq!(m.specificity(), Some(9.0 / 12.0));
        assert_eq!(m.accuracy, 15.0 / 20.0);
        assert_eq!(m.confusion, vec![vec![9, 2], vec![3, 6]]);
        assert_eq!(m.balance_gap(), 0.0);
    }

    #[test]
    fn folds_partition_and_stratify() {
        let labels: Vec<usize> = (0..103).map(|i| usize::from(i % 4 == 0)).collect();
        let fold_of = stratified_folds(&labels, 2, 5, &mut rng_for(1, &[])).unwrap();
        let mut sizes = [0usize; 5];
        let mut pos = [0usize; 5];
        for (i, &f) in fold_of.iter().enumerate() {
            sizes[f] += 1;
            pos[f] += labels[i];
        }
        assert_eq!(sizes.iter().sum::<usize>(), 103);
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        assert!(pos.iter().max().unwrap() - pos.iter().min().unwrap() <= 1);
    }

    #[test]
    fn too_few_members_for_folds() {
        let labels = vec![0, 0, 0, 0, 0, 0, 1, 1, 1];
        assert!(matches!(
            stratified_folds(&labels, 2, 5, &mut rng_for(1, &[])),
            Err(Error::MissingClassInFold { class: 1, .. })
        ));
    }

    #[test]
    fn selection_rule() {
        let mk = |acc: f64, r0: f64, r1: f64| Metrics { n: 10, accuracy: acc, recalls: vec![r0, r1], confusion: vec![] };
        let ms = [mk(0.9, 0.95, 0.7), mk(0.8, 0.8, 0.8), mk(0.85, 0.85, 0.85), mk(0.99, 0.7, 0.9)];
        assert_eq!(select_fold(&ms), Some(2));
        assert_eq!(select_fold(&[]), None);
    }

    #[test]
    fn config_checks_batch_divisibility() {
        let c = TrainConfig { batch_size: Some(50), ..TrainConfig::default() };
        assert!(c.validate(3).is_err());
        assert!(TrainConfig::default().validate(3).is_ok());
        assert!(TrainConfig::default().validate(2).is_ok());
        assert_eq!(TrainConfig::default().batch_size_for(3), 60);
    }
}
