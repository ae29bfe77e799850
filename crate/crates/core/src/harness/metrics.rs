//! Classification metrics. The unstable class is the positive class: a
//! missed instability is the operationally costly error.

use serde::{Deserialize, Serialize};

use super::HarnessError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Percentages.
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_fold: Option<Vec<MetricsReport>>,
}

impl MetricsReport {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Unweighted mean of fold-level metrics, counts summed.
    pub fn mean_of(folds: Vec<MetricsReport>) -> MetricsReport {
        let k = folds.len().max(1) as f64;
        let mut out = MetricsReport {
            accuracy: folds.iter().map(|m| m.accuracy).sum::<f64>() / k,
            precision: folds.iter().map(|m| m.precision).sum::<f64>() / k,
            recall: folds.iter().map(|m| m.recall).sum::<f64>() / k,
            f1: folds.iter().map(|m| m.f1).sum::<f64>() / k,
            tp: folds.iter().map(|m| m.tp).sum(),
            fp: folds.iter().map(|m| m.fp).sum(),
            fn_: folds.iter().map(|m| m.fn_).sum(),
            tn: folds.iter().map(|m| m.tn).sum(),
            per_fold: None,
        };
        out.per_fold = Some(folds);
        out
    }
}

/// Confusion-count metrics with label 1 = unstable = positive.
pub fn compute_metrics(predictions: &[u8], labels: &[u8]) -> Result<MetricsReport, HarnessError> {
    if predictions.is_empty() || predictions.len() != labels.len() {
        return Err(HarnessError::EmptyPredictions);
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &l) in predictions.iter().zip(labels) {
        match (p != 0, l != 0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let total = (tp + fp + fn_ + tn) as f64;
    let accuracy = 100.0 * (tp + tn) as f64 / total;
    let precision = if tp + fp > 0 { 100.0 * tp as f64 / (tp + fp) as f64 } else { 0.0 };
    let recall = if tp + fn_ > 0 { 100.0 * tp as f64 / (tp + fn_) as f64 } else { 0.0 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(MetricsReport { accuracy, precision, recall, f1, tp, fp, fn_, tn, per_fold: None })
}
