use serde::Serialize;

use super::{ConfusionMatrix, CostRatio};
use crate::error::{Error, Result};

pub(crate) fn validate_scores(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(Error::InvalidArgument(format!("score {s} outside [0, 1]")));
    }
    Ok(())
}

pub(crate) fn require_both_classes(labels: &[bool]) -> Result<()> {
    if !labels.iter().any(|&l| l) {
        return Err(Error::SingleClass("positive"));
    }
    if !labels.iter().any(|&l| !l) {
        return Err(Error::SingleClass("negative"));
    }
    Ok(())
}

/// Every threshold that can change a confusion matrix: midpoints between
/// consecutive distinct scores, plus 0 and 1. Sorted ascending, no
/// duplicates.
pub fn candidate_thresholds(scores: &[f64]) -> Vec<f64> {
    let mut distinct = scores.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let mut out = Vec::with_capacity(distinct.len() + 1);
    out.push(0.0);
    out.extend(distinct.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0));
    out.push(1.0);
    out.sort_by(f64::total_cmp);
    out.dedup();
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThresholdPoint {
    pub threshold: f64,
    pub confusion: ConfusionMatrix,
}

/// Confusion matrix at each candidate threshold, ascending, in
/// O(n log n).
pub fn threshold_sweep(scores: &[f64], labels: &[bool]) -> Vec<ThresholdPoint> {
    let mut pairs: Vec<(f64, bool)> = scores.iter().copied().zip(labels.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;

    let mut below_pos = 0;
    let mut below_neg = 0;
    let mut i = 0;
    candidate_thresholds(scores)
        .into_iter()
        .map(|t| {
            while i < pairs.len() && pairs[i].0 < t {
                if pairs[i].1 {
                    below_pos += 1;
                } else {
                    below_neg += 1;
                }
                i += 1;
            }
            ThresholdPoint {
                threshold: t,
                confusion: ConfusionMatrix {
                    tp: positives - below_pos,
                    fp: negatives - below_neg,
                    tn: below_neg,
                    fn_: below_pos,
                },
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThresholdChoice {
    pub threshold: f64,
    pub confusion: ConfusionMatrix,
    /// `r * FP + FN` at the chosen threshold.
    pub cost: f64,
}

/// Minimum-cost candidate, smallest threshold on ties. Works on any input,
/// including single-class and empty slices.
pub(crate) fn min_cost_threshold(scores: &[f64], labels: &[bool], ratio: CostRatio) -> ThresholdChoice {
    let mut best: Option<ThresholdChoice> = None;
    for point in threshold_sweep(scores, labels) {
        let cost = point.confusion.cost(ratio);
        if best.is_none_or(|b| cost < b.cost) {
            best = Some(ThresholdChoice {
                threshold: point.threshold,
                confusion: point.confusion,
                cost,
            });
        }
    }
    best.expect("candidate set always holds 0 and 1")
}

/// Threshold minimizing `r * FP + FN` over the candidate set. At `r = 1`
/// this is the accuracy-maximizing threshold.
pub fn optimize_single_threshold(scores: &[f64], labels: &[bool], ratio: CostRatio) -> Result<ThresholdChoice> {
    validate_scores(scores, labels)?;
    require_both_classes(labels)?;
    Ok(min_cost_threshold(scores, labels, ratio))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC curve ordered by ascending threshold: starts at (1, 1) with threshold
/// 0 and ends at (0, 0).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    validate_scores(scores, labels)?;
    require_both_classes(labels)?;
    let positives = labels.iter().filter(|&&l| l).count() as f64;
    let negatives = labels.len() as f64 - positives;

    let mut points: Vec<RocPoint> = threshold_sweep(scores, labels)
        .into_iter()
        .map(|p| RocPoint {
            threshold: p.threshold,
            fpr: p.confusion.fp as f64 / negatives,
            tpr: p.confusion.tp as f64 / positives,
        })
        .collect();
    // Scores of exactly 1.0 stay positive at threshold 1; close the curve just above.
    if points.last().is_some_and(|p| p.fpr > 0.0 || p.tpr > 0.0) {
        points.push(RocPoint {
            threshold: 1f64.next_up(),
            fpr: 0.0,
            tpr: 0.0,
        });
    }
    let auc = points
        .windows(2)
        .map(|w| (w[0].fpr - w[1].fpr) * (w[0].tpr + w[1].tpr) / 2.0)
        .sum::<f64>()
        .clamp(0.0, 1.0);
    Ok(RocCurve { points, auc })
}
