//! Predicting a chunk's R-D cluster from complexity features.
//!
//! One-vs-one RBF SVMs over standardized features, majority vote.

mod cv;
pub mod smo;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rd_model::NormalizationStats;

pub use cv::{grid_search_cv, split_train_test, stratified_folds, CvCell, CvResult};
pub use smo::{train_binary_svm, BinaryMachine, SmoOptions};

/// Schema version written into serialized classifier models.
pub const CLASSIFIER_MODEL_VERSION: u32 = 1;

pub const DEFAULT_C_GRID: [f64; 4] = [0.1, 1.0, 10.0, 100.0];
pub const DEFAULT_GAMMA_GRID: [f64; 4] = [0.01, 0.1, 1.0, 10.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub chunk_id: String,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn new(chunk_id: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            chunk_id: chunk_id.into(),
            values,
        }
    }
}

/// A feature vector with its cluster label.
pub type LabeledFeature = (FeatureVector, usize);

/// Standardizes features before the RBF kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureScaler(NormalizationStats);

impl FeatureScaler {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        NormalizationStats::fit(rows).map(Self)
    }

    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.0.normalize(x)
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn means(&self) -> &[f64] {
        &self.0.means
    }

    pub fn stds(&self) -> &[f64] {
        &self.0.stds
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmHyperparams {
    pub c: f64,
    pub gamma: f64,
}

impl SvmHyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c.is_finite() && self.c > 0.0 && self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "SVM hyperparameters must be positive and finite (c={}, gamma={})",
                self.c, self.gamma
            )));
        }
        Ok(())
    }
}

/// Multi-class one-vs-one kernel SVM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    pub v: u32,
    pub scaler: FeatureScaler,
    /// Sorted cluster ids seen in training.
    pub classes: Vec<usize>,
    /// One machine per class pair `(classes[a], classes[b])`, `a < b`, in
    /// lexicographic order; positive decisions favor `classes[a]`.
    pub machines: Vec<BinaryMachine>,
    pub hyperparams: SvmHyperparams,
}

fn check_rows(rows: &[Vec<f64>]) -> Result<usize> {
    let dim = rows.first().map(Vec::len).unwrap_or(0);
    if let Some(r) = rows.iter().find(|r| r.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: r.len(),
        });
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(dim)
}

impl ClassifierModel {
    /// Fits the scaler and every pairwise machine on raw features.
    pub fn train(rows: &[Vec<f64>], labels: &[usize], hp: SvmHyperparams) -> Result<Self> {
        Self::train_with(rows, labels, hp, SmoOptions::default())
    }

    pub fn train_with(
        rows: &[Vec<f64>],
        labels: &[usize],
        hp: SvmHyperparams,
        opts: SmoOptions,
    ) -> Result<Self> {
        hp.validate()?;
        if rows.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: rows.len(),
                actual: labels.len(),
            });
        }
        check_rows(rows)?;
        let mut classes: Vec<usize> = labels.to_vec();
        classes.sort_unstable();
        classes.dedup();
        if classes.len() < 2 {
            return Err(Error::Degenerate(
                "classifier training needs at least two classes".into(),
            ));
        }
        let scaler = FeatureScaler::fit(rows)?;
        let scaled = rows
            .iter()
            .map(|r| scaler.transform(r))
            .collect::<Result<Vec<_>>>()?;
        let pairs: Vec<(usize, usize)> = (0..classes.len())
            .flat_map(|a| (a + 1..classes.len()).map(move |b| (a, b)))
            .collect();
        let machines = pairs
            .par_iter()
            .map(|&(a, b)| {
                let (pos, neg) = (classes[a], classes[b]);
                let (xs, ys): (Vec<Vec<f64>>, Vec<bool>) = scaled
                    .iter()
                    .zip(labels)
                    .filter(|(_, &l)| l == pos || l == neg)
                    .map(|(x, &l)| (x.clone(), l == pos))
                    .unzip();
                train_binary_svm(&xs, &ys, hp, opts, pos, neg)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            v: CLASSIFIER_MODEL_VERSION,
            scaler,
            classes,
            machines,
            hyperparams: hp,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.scaler.dim()
    }

    /// Predicts the cluster of raw (unscaled) features.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        let z = self.scaler.transform(x)?;
        Ok(self.predict_scaled(&z))
    }

    pub fn predict_scaled(&self, z: &[f64]) -> usize {
        let n = self.classes.len();
        let index = |c: usize| self.classes.binary_search(&c).expect("known class");
        let mut votes = vec![0usize; n];
        let mut strength = vec![0.0f64; n];
        for m in &self.machines {
            let d = m.decision(z);
            let winner = if d > 0.0 { m.positive } else { m.negative };
            let w = index(winner);
            votes[w] += 1;
            strength[w] += d.abs();
        }
        let mut best = 0;
        for c in 1..n {
            if votes[c] > votes[best] || (votes[c] == votes[best] && strength[c] > strength[best]) {
                best = c;
            }
        }
        self.classes[best]
    }

    pub fn predict_feature(&self, f: &FeatureVector) -> Result<usize> {
        self.predict(&f.values)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(s)?;
        if model.v != CLASSIFIER_MODEL_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported classifier model version {}",
                model.v
            )));
        }
        let k = model.classes.len();
        if model.machines.len() != k * k.saturating_sub(1) / 2 {
            return Err(Error::InvalidConfig(
                "machine count does not match class pairs".into(),
            ));
        }
        Ok(model)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Accuracy and `[true][predicted]` confusion counts over a labeled set.
pub fn evaluate(
    model: &ClassifierModel,
    test: &[LabeledFeature],
) -> Result<(f64, Vec<Vec<usize>>)> {
    if test.is_empty() {
        return Err(Error::NotEnoughSamples { needed: 1, got: 0 });
    }
    let predictions = test
        .iter()
        .map(|(f, _)| model.predict_feature(f))
        .collect::<Result<Vec<_>>>()?;
    let truth: Vec<usize> = test.iter().map(|(_, l)| *l).collect();
    Ok(confusion(&truth, &predictions, &model.classes))
}

pub(crate) fn confusion(
    truth: &[usize],
    predicted: &[usize],
    classes: &[usize],
) -> (f64, Vec<Vec<usize>>) {
    let k = truth
        .iter()
        .chain(predicted)
        .chain(classes)
        .max()
        .map_or(0, |m| m + 1);
    let mut matrix = vec![vec![0usize; k]; k];
    for (&t, &p) in truth.iter().zip(predicted) {
        matrix[t][p] += 1;
    }
    let correct: usize = (0..k).map(|i| matrix[i][i]).sum();
    (correct as f64 / truth.len() as f64, matrix)
}

/// Cross-validation grid, chosen hyperparameters and held-out results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub cv_grid: Vec<CvCell>,
    pub best: SvmHyperparams,
    pub folds: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub test_accuracy: f64,
    pub confusion_matrix: Vec<Vec<usize>>,
}

/// Split, grid-search, refit on the training split, evaluate on the test split.
pub fn train_and_evaluate(
    dataset: &[LabeledFeature],
    train_ratio: f64,
    folds: usize,
    c_grid: &[f64],
    gamma_grid: &[f64],
    seed: u64,
) -> Result<(ClassifierModel, TrainReport)> {
    let (train, test) = split_train_test(dataset, train_ratio, seed)?;
    let cv = grid_search_cv(&train, c_grid, gamma_grid, folds, seed)?;
    let rows: Vec<Vec<f64>> = train.iter().map(|(f, _)| f.values.clone()).collect();
    let labels: Vec<usize> = train.iter().map(|(_, l)| *l).collect();
    let model = ClassifierModel::train(&rows, &labels, cv.best)?;
    let (test_accuracy, confusion_matrix) = evaluate(&model, &test)?;
    let report = TrainReport {
        cv_grid: cv.cells,
        best: cv.best,
        folds,
        n_train: train.len(),
        n_test: test.len(),
        test_accuracy,
        confusion_matrix,
    };
    Ok((model, report))
}
