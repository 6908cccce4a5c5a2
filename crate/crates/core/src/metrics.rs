//! Regression and binary-classification metrics.
//!
//! The positive class is always label `1` (extreme poverty). Metrics whose
//! denominator vanishes return [`MetricError::Undefined`] instead of a
//! sentinel value.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default F-beta weight; values below one favour precision.
pub const DEFAULT_BETA: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("metric input is empty")]
    Empty,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("targets are constant; R-squared is undefined")]
    ConstantTargets,
    #[error("{0} is undefined: zero denominator")]
    Undefined(&'static str),
    #[error("label at index {index} is {value}, expected 0 or 1")]
    InvalidLabel { index: usize, value: u8 },
    #[error("beta must be positive and finite, got {0}")]
    InvalidBeta(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Regression,
    Classification,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Regression => "regression",
            Task::Classification => "classification",
        })
    }
}

/// Paired predictions and targets; equal non-zero lengths, all finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionPairs {
    predictions: Vec<f64>,
    targets: Vec<f64>,
}

impl RegressionPairs {
    pub fn new(predictions: Vec<f64>, targets: Vec<f64>) -> Result<Self, MetricError> {
        if predictions.len() != targets.len() {
            return Err(MetricError::LengthMismatch {
                left: predictions.len(),
                right: targets.len(),
            });
        }
        if predictions.is_empty() {
            return Err(MetricError::Empty);
        }
        if let Some(i) = predictions
            .iter()
            .zip(&targets)
            .position(|(p, t)| !p.is_finite() || !t.is_finite())
        {
            return Err(MetricError::NonFinite(i));
        }
        Ok(Self { predictions, targets })
    }

    pub fn predictions(&self) -> &[f64] {
        &self.predictions
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.predictions.iter().copied().zip(self.targets.iter().copied())
    }

    fn sse(&self) -> f64 {
        self.iter().map(|(p, t)| (p - t) * (p - t)).sum()
    }

    fn sst(&self) -> f64 {
        let mean = self.targets.iter().sum::<f64>() / self.len() as f64;
        self.targets.iter().map(|t| (t - mean) * (t - mean)).sum()
    }
}

/// Root mean squared error.
pub fn rmse(pairs: &RegressionPairs) -> f64 {
    (pairs.sse() / pairs.len() as f64).sqrt()
}

/// Coefficient of determination, `1 - SSE / SST`.
pub fn r_squared(pairs: &RegressionPairs) -> Result<f64, MetricError> {
    let sst = pairs.sst();
    if sst == 0.0 {
        return Err(MetricError::ConstantTargets);
    }
    Ok(1.0 - pairs.sse() / sst)
}

/// Binary confusion counts with label `1` as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tp: u64,
}

impl ConfusionMatrix {
    pub fn new(tn: u64, fp: u64, fn_: u64, tp: u64) -> Self {
        Self { tn, fp, fn_, tp }
    }

    pub fn total(&self) -> u64 {
        self.tn + self.fp + self.fn_ + self.tp
    }

    /// Counts as `[[tn, fp], [fn, tp]]`; rows are true labels.
    pub fn rows(&self) -> [[u64; 2]; 2] {
        [[self.tn, self.fp], [self.fn_, self.tp]]
    }

    /// Each row divided by its row sum.
    pub fn normalized(&self) -> Result<[[f64; 2]; 2], MetricError> {
        let mut out = [[0.0; 2]; 2];
        for (i, row) in self.rows().iter().enumerate() {
            let sum = row[0] + row[1];
            if sum == 0 {
                return Err(MetricError::Undefined(if i == 0 {
                    "normalized row 0"
                } else {
                    "normalized row 1"
                }));
            }
            out[i] = [row[0] as f64 / sum as f64, row[1] as f64 / sum as f64];
        }
        Ok(out)
    }
}

/// Tallies `(label, prediction)` cells.
pub fn confusion(labels: &[u8], preds: &[u8]) -> Result<ConfusionMatrix, MetricError> {
    if labels.len() != preds.len() {
        return Err(MetricError::LengthMismatch {
            left: labels.len(),
            right: preds.len(),
        });
    }
    if labels.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut cm = ConfusionMatrix::default();
    for (index, (&y, &p)) in labels.iter().zip(preds).enumerate() {
        match (y, p) {
            (0, 0) => cm.tn += 1,
            (0, 1) => cm.fp += 1,
            (1, 0) => cm.fn_ += 1,
            (1, 1) => cm.tp += 1,
            (0 | 1, value) | (value, _) => return Err(MetricError::InvalidLabel { index, value }),
        }
    }
    Ok(cm)
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64, MetricError> {
    match cm.total() {
        0 => Err(MetricError::Undefined("accuracy")),
        total => Ok((cm.tn + cm.tp) as f64 / total as f64),
    }
}

pub fn precision(cm: &ConfusionMatrix) -> Result<f64, MetricError> {
    match cm.tp + cm.fp {
        0 => Err(MetricError::Undefined("precision")),
        d => Ok(cm.tp as f64 / d as f64),
    }
}

pub fn recall(cm: &ConfusionMatrix) -> Result<f64, MetricError> {
    match cm.tp + cm.fn_ {
        0 => Err(MetricError::Undefined("recall")),
        d => Ok(cm.tp as f64 / d as f64),
    }
}

/// `(1 + β²)·P·R / (β²·P + R)`.
pub fn fbeta(precision: f64, recall: f64, beta: f64) -> Result<f64, MetricError> {
    if !(beta.is_finite() && beta > 0.0) {
        return Err(MetricError::InvalidBeta(beta));
    }
    let b2 = beta * beta;
    let denom = b2 * precision + recall;
    if denom == 0.0 {
        return Err(MetricError::Undefined("fbeta"));
    }
    Ok((1.0 + b2) * precision * recall / denom)
}

/// Accuracy, precision, recall and F-beta of a matrix, keyed by the names
/// used in epoch logs. Undefined metrics are reported as `None`.
pub fn classification_metrics(cm: &ConfusionMatrix, beta: f64) -> BTreeMap<String, Option<f64>> {
    let p = precision(cm).ok();
    let r = recall(cm).ok();
    let f = match (p, r) {
        (Some(p), Some(r)) => fbeta(p, r, beta).ok(),
        _ => None,
    };
    BTreeMap::from([
        ("accuracy".to_string(), accuracy(cm).ok()),
        ("precision_score".to_string(), p),
        ("recall_score".to_string(), r),
        ("fbeta_score".to_string(), f),
    ])
}

/// `rmse` and `r2_score`, keyed by the names used in epoch logs.
pub fn regression_metrics(pairs: &RegressionPairs) -> BTreeMap<String, Option<f64>> {
    BTreeMap::from([
        ("rmse".to_string(), Some(rmse(pairs))),
        ("r2_score".to_string(), r_squared(pairs).ok()),
    ])
}

/// Evaluation summary of one model on one validation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: Task,
    pub n_valid: usize,
    pub metrics: BTreeMap<String, Option<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confusion: Option<ConfusionMatrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pairs_path: Option<String>,
    /// Prediction/target pairs for regression; persisted separately at
    /// `pairs_path`.
    #[serde(skip)]
    pub pairs: Option<RegressionPairs>,
}

impl MetricsReport {
    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied().flatten()
    }

    pub fn regression(pairs: RegressionPairs) -> Self {
        Self {
            task: Task::Regression,
            n_valid: pairs.len(),
            metrics: regression_metrics(&pairs),
            confusion: None,
            pairs_path: None,
            pairs: Some(pairs),
        }
    }

    pub fn classification(cm: ConfusionMatrix, beta: f64) -> Self {
        Self {
            task: Task::Classification,
            n_valid: cm.total() as usize,
            metrics: classification_metrics(&cm, beta),
            confusion: Some(cm),
            pairs_path: None,
            pairs: None,
        }
    }
}

/// Writes pairs as `prediction,target` CSV lines with a header.
pub fn write_pairs_csv(pairs: &RegressionPairs) -> String {
    let mut out = String::from("prediction,target\n");
    for (p, t) in pairs.iter() {
        out.push_str(&format!("{p},{t}\n"));
    }
    out
}

pub fn read_pairs_csv(text: &str) -> Result<RegressionPairs, MetricError> {
    let mut preds = Vec::new();
    let mut targets = Vec::new();
    for (i, line) in text.lines().skip(1).enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.split(',');
        let p = it.next().and_then(|s| s.trim().parse::<f64>().ok());
        let t = it.next().and_then(|s| s.trim().parse::<f64>().ok());
        match (p, t) {
            (Some(p), Some(t)) => {
                preds.push(p);
                targets.push(t);
            }
            _ => return Err(MetricError::NonFinite(i)),
        }
    }
    RegressionPairs::new(preds, targets)
}
