//! Evaluation metrics and the small statistics helpers used around them.

use serde::{Deserialize, Serialize};

use crate::error::{GnanError, Result};

/// Metric bundle produced by evaluating a model on one split. Fields are
/// populated according to the task: classification gets accuracy (binary
/// additionally ROC-AUC), regression gets MAE. `loss` is cross-entropy for
/// classification and mean absolute error for regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub loss: f64,
    pub accuracy: Option<f64>,
    pub roc_auc: Option<f64>,
    pub mae: Option<f64>,
}

/// Fraction of exact matches between predicted and true class labels.
pub fn accuracy(predicted: &[f64], targets: &[f64]) -> Result<f64> {
    check_pair(predicted, targets)?;
    let hits = predicted.iter().zip(targets).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / targets.len() as f64)
}

/// Mean absolute error.
pub fn mae(predicted: &[f64], targets: &[f64]) -> Result<f64> {
    check_pair(predicted, targets)?;
    let total: f64 = predicted.iter().zip(targets).map(|(p, t)| (p - t).abs()).sum();
    Ok(total / targets.len() as f64)
}

/// ROC-AUC by the rank-based Mann–Whitney statistic, with average ranks on
/// tied scores (so an uninformative constant scorer lands at exactly 0.5).
/// Labels must be 0 or 1; a split containing only one class has no defined
/// value and is reported as an error rather than a made-up number.
pub fn roc_auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    check_pair(scores, labels)?;
    let positives = labels.iter().filter(|&&l| l == 1.0).count();
    let negatives = labels.len() - positives;
    if labels.iter().any(|&l| l != 0.0 && l != 1.0) {
        return Err(GnanError::Validation("ROC-AUC labels must be 0 or 1".into()));
    }
    if positives == 0 || negatives == 0 {
        return Err(GnanError::UndefinedMetric(format!(
            "ROC-AUC needs both classes; split has {positives} positives and {negatives} negatives"
        )));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Average rank across each tie group, 1-based.
    let mut rank_sum_pos = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let avg_rank = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            if labels[idx] == 1.0 {
                rank_sum_pos += avg_rank;
            }
        }
        start = end;
    }

    let p = positives as f64;
    let n = negatives as f64;
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(GnanError::Contract("mean of an empty slice".into()));
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64;
    Ok((mean, var.sqrt()))
}

/// Linear-interpolation percentile (the common "type 7" definition) over an
/// ascending-sorted slice; `p` in [0, 100].
pub fn percentile(sorted: &[f64], p: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(GnanError::Contract("percentile of an empty slice".into()));
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(GnanError::Config(format!("percentile {p} outside [0, 100]")));
    }
    let h = (sorted.len() - 1) as f64 * p / 100.0;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Ok(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(GnanError::Contract(format!(
            "metric inputs have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(GnanError::UndefinedMetric("metric over an empty split".into()));
    }
    Ok(())
}
