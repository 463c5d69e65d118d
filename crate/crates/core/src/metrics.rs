//! Scoring: weighted one-vs-rest AUROC, accuracy, the per-instance oracle
//! (VBA), the single best base model (SBA) and closed-gap normalization.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::model::{ClassIdx, PredictionMatrix};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("metric undefined: {0}")]
    Undefined(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("closed gap undefined: VBA and SBA both score {0}")]
    DegenerateNormalization(f64),
    #[error("unknown metric {0:?} (expected area_under_roc_curve or accuracy)")]
    UnknownMetric(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum Metric {
    #[default]
    #[serde(rename = "area_under_roc_curve")]
    Auroc,
    #[serde(rename = "accuracy")]
    Accuracy,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Auroc => "area_under_roc_curve",
            Metric::Accuracy => "accuracy",
        }
    }

    /// Scores predictions/confidences against `ground_truth`.
    pub fn score(
        self,
        ground_truth: &[ClassIdx],
        predictions: &[ClassIdx],
        confidences: ArrayView2<'_, f64>,
    ) -> Result<f64, MetricError> {
        match self {
            Metric::Auroc => auroc(ground_truth, confidences),
            Metric::Accuracy => accuracy(ground_truth, predictions),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = MetricError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "area_under_roc_curve" | "auroc" => Ok(Metric::Auroc),
            "accuracy" => Ok(Metric::Accuracy),
            other => Err(MetricError::UnknownMetric(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricScore {
    pub value: f64,
    pub metric: Metric,
}

/// AUC of `scores` for the positive instances, with half credit for ties.
/// `None` when either side is empty.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    debug_assert_eq!(scores.len(), positive.len());
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Mann-Whitney U from mid-ranks
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let mid_rank = (i + j + 1) as f64 / 2.0;
        let pos_in_group = order[i..j].iter().filter(|&&k| positive[k]).count();
        rank_sum_pos += mid_rank * pos_in_group as f64;
        i = j;
    }
    let p = n_pos as f64;
    let u = rank_sum_pos - p * (p + 1.0) / 2.0;
    Some(u / (p * n_neg as f64))
}

/// Prevalence-weighted one-vs-rest AUROC. Classes without positives or
/// without negatives in the slice are left out of the average.
pub fn auroc(
    ground_truth: &[ClassIdx],
    confidences: ArrayView2<'_, f64>,
) -> Result<f64, MetricError> {
    let (n, c) = confidences.dim();
    if n != ground_truth.len() {
        return Err(MetricError::Shape(format!(
            "{} labels vs {n} confidence rows",
            ground_truth.len()
        )));
    }
    let mut weighted = 0.0;
    let mut weight_total = 0usize;
    for class in 0..c {
        let positive: Vec<bool> = ground_truth.iter().map(|&y| y == class).collect();
        let scores: Vec<f64> = confidences.column(class).to_vec();
        if let Some(auc) = binary_auc(&scores, &positive) {
            let prevalence = positive.iter().filter(|&&p| p).count();
            weighted += auc * prevalence as f64;
            weight_total += prevalence;
        }
    }
    if weight_total == 0 {
        return Err(MetricError::Undefined(
            "AUROC needs at least two classes present".into(),
        ));
    }
    Ok(weighted / weight_total as f64)
}

pub fn accuracy(ground_truth: &[ClassIdx], predictions: &[ClassIdx]) -> Result<f64, MetricError> {
    if ground_truth.len() != predictions.len() {
        return Err(MetricError::Shape(format!(
            "{} labels vs {} predictions",
            ground_truth.len(),
            predictions.len()
        )));
    }
    if ground_truth.is_empty() {
        return Err(MetricError::Undefined("accuracy of an empty slice".into()));
    }
    let hits = ground_truth
        .iter()
        .zip(predictions)
        .filter(|(a, b)| a == b)
        .count();
    Ok(hits as f64 / ground_truth.len() as f64)
}

/// Score of a single base model of `pm`.
pub fn model_score(
    pm: &PredictionMatrix,
    model: usize,
    metric: Metric,
) -> Result<f64, MetricError> {
    let preds = pm.model_predictions(model).to_vec();
    metric.score(&pm.ground_truth, &preds, pm.model_confidences(model))
}

/// Per-instance oracle: the rows of the base model with the highest
/// confidence on the true class (lowest index on ties). Models that predict
/// the true class rank above those that do not, so with three or more
/// classes a confident-but-wrong row never displaces a correct one.
pub fn vba_rows(pm: &PredictionMatrix) -> (Vec<ClassIdx>, Array2<f64>) {
    let k = pm.n_instances();
    let mut predictions = Vec::with_capacity(k);
    let mut confidences = Array2::zeros((k, pm.n_classes));
    for i in 0..k {
        let y = pm.ground_truth[i];
        let key = |b: usize| (pm.predictions[[i, b]] == y, pm.confidences[[i, b, y]]);
        let mut best = 0;
        for b in 1..pm.n_models() {
            let (hit, conf) = key(b);
            let (best_hit, best_conf) = key(best);
            if (hit && !best_hit) || (hit == best_hit && conf > best_conf) {
                best = b;
            }
        }
        predictions.push(pm.predictions[[i, best]]);
        confidences
            .row_mut(i)
            .assign(&pm.confidences.slice(ndarray::s![i, best, ..]));
    }
    (predictions, confidences)
}

/// Index of the best single base model on `pm` (lowest index on ties).
/// Models whose score is undefined are skipped.
pub fn sba_index(pm: &PredictionMatrix, metric: Metric) -> Result<usize, MetricError> {
    let mut best: Option<(usize, f64)> = None;
    let mut last_err = None;
    for b in 0..pm.n_models() {
        match model_score(pm, b, metric) {
            Ok(s) => {
                if best.is_none_or(|(_, bs)| s > bs) {
                    best = Some((b, s));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.map(|(b, _)| b)
        .ok_or_else(|| last_err.unwrap_or_else(|| MetricError::Undefined("no base models".into())))
}

/// `(tech - sba) / (vba - sba)`: 0 at the SBA, 1 at the VBA.
pub fn closed_gap(tech: f64, sba: f64, vba: f64) -> Result<f64, MetricError> {
    let span = vba - sba;
    if span == 0.0 || !span.is_finite() {
        return Err(MetricError::DegenerateNormalization(vba));
    }
    Ok((tech - sba) / span)
}
