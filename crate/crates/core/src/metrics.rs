//! Classification error, confusion matrix, recall, ROC curve and AUC.
//!
//! The positive class is default (label 1) throughout.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_lengths(predictions: &[u8], labels: &[u8]) -> Result<()> {
    if predictions.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            got: predictions.len(),
        });
    }
    if labels.is_empty() {
        return Err(Error::EmptyDataset("no predictions to evaluate".into()));
    }
    Ok(())
}

/// Fraction of predictions that differ from the labels.
pub fn classification_error(predictions: &[u8], labels: &[u8]) -> Result<f64> {
    check_lengths(predictions, labels)?;
    let wrong = predictions.iter().zip(labels).filter(|(a, b)| a != b).count();
    Ok(wrong as f64 / labels.len() as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub true_positive: u64,
    pub false_negative: u64,
    pub false_positive: u64,
    pub true_negative: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.true_positive + self.false_negative + self.false_positive + self.true_negative
    }

    pub fn error(&self) -> f64 {
        (self.false_negative + self.false_positive) as f64 / self.total() as f64
    }

    /// `TP / (TP + FN)`, `None` when there are no actual defaults.
    pub fn recall(&self) -> Option<f64> {
        let pos = self.true_positive + self.false_negative;
        (pos > 0).then(|| self.true_positive as f64 / pos as f64)
    }
}

pub fn confusion(predictions: &[u8], labels: &[u8]) -> Result<ConfusionMatrix> {
    check_lengths(predictions, labels)?;
    let mut m = ConfusionMatrix::default();
    for (&pred, &y) in predictions.iter().zip(labels) {
        match (y, pred) {
            (1, 1) => m.true_positive += 1,
            (1, _) => m.false_negative += 1,
            (_, 1) => m.false_positive += 1,
            _ => m.true_negative += 1,
        }
    }
    Ok(m)
}

pub fn recall(matrix: &ConfusionMatrix) -> Option<f64> {
    matrix.recall()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub false_positive_rate: f64,
    pub true_positive_rate: f64,
    /// Scores `>= threshold` are called positive at this point.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

fn class_counts(labels: &[u8]) -> Result<(u64, u64)> {
    let pos = labels.iter().filter(|&&y| y == 1).count() as u64;
    let neg = labels.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Argument("ROC needs both classes in the labels".into()));
    }
    Ok((pos, neg))
}

/// ROC curve swept over every distinct score, AUC by the trapezoidal rule.
/// Tied scores form a single point.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            got: scores.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Argument("NaN score".into()));
    }
    let (pos, neg) = class_counts(labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint {
        false_positive_rate: 0.0,
        true_positive_rate: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut auc = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let prev = *points.last().expect("non-empty");
        let pt = RocPoint {
            false_positive_rate: fp as f64 / neg as f64,
            true_positive_rate: tp as f64 / pos as f64,
            threshold: s,
        };
        auc += (pt.false_positive_rate - prev.false_positive_rate)
            * (pt.true_positive_rate + prev.true_positive_rate)
            / 2.0;
        points.push(pt);
    }
    Ok(RocCurve { points, auc })
}

/// Mann-Whitney form of the AUC: the probability that a random default
/// outscores a random non-default, ties counting one half. Computed from
/// mid-ranks in `O(n log n)`.
pub fn auc_rank_statistic(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            got: scores.len(),
        });
    }
    let (pos, neg) = class_counts(labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the rank sum, kept integral
    let mut rank2_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j share mid-rank (i+1+j)/2
        let mid2 = (i + 1 + j) as u128;
        let k = order[i..j].iter().filter(|&&o| labels[o] == 1).count() as u128;
        rank2_sum += mid2 * k;
        i = j;
    }
    let u2 = rank2_sum - (pos as u128) * (pos as u128 + 1);
    Ok(u2 as f64 / (2.0 * pos as f64 * neg as f64))
}

impl RocCurve {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut s = String::from("fpr,tpr,threshold\n");
        for p in &self.points {
            s.push_str(&format!(
                "{},{},{}\n",
                p.false_positive_rate, p.true_positive_rate, p.threshold
            ));
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(s.as_bytes()))
            .map_err(|e| Error::io(path, e))
    }
}

/// Error of the logistic model and of the network restricted to `rejected`.
/// `None` for an empty rejected set.
pub fn rejected_set_errors(
    rejected: &[usize],
    nn_predictions: &[u8],
    lr_predictions: &[u8],
    labels: &[u8],
) -> Result<Option<(f64, f64)>> {
    if rejected.is_empty() {
        return Ok(None);
    }
    if nn_predictions.len() != labels.len() || lr_predictions.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            got: nn_predictions.len().min(lr_predictions.len()),
        });
    }
    let mut lr_wrong = 0usize;
    let mut nn_wrong = 0usize;
    for &i in rejected {
        if i >= labels.len() {
            return Err(Error::Argument(format!("rejected index {i} out of range")));
        }
        lr_wrong += usize::from(lr_predictions[i] != labels[i]);
        nn_wrong += usize::from(nn_predictions[i] != labels[i]);
    }
    let k = rejected.len() as f64;
    Ok(Some((lr_wrong as f64 / k, nn_wrong as f64 / k)))
}

/// Everything reported for a single model on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEvaluation {
    pub n: usize,
    pub classification_error: f64,
    pub confusion: ConfusionMatrix,
    pub recall: Option<f64>,
    pub auc: Option<f64>,
}

pub fn evaluate_scores(
    scores: &[f64],
    labels: &[u8],
    tau: crate::models::Threshold,
) -> Result<(ModelEvaluation, Option<RocCurve>)> {
    let pred = crate::models::predict_all(scores, tau);
    let cm = confusion(&pred, labels)?;
    let roc = roc_auc(scores, labels).ok();
    Ok((
        ModelEvaluation {
            n: labels.len(),
            classification_error: cm.error(),
            confusion: cm,
            recall: cm.recall(),
            auc: roc.as_ref().map(|r| r.auc),
        },
        roc,
    ))
}
