//! Datapoint distances and nearest-counterfactual search.
//!
//! Per-feature distances: numeric features contribute `|a - b| / std`,
//! categorical features contribute 0 when equal and the feature's collision
//! probability `sum_v p_v^2` otherwise. Totals aggregate with an L1 or L2 norm.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, FeatureKind, Value};
use crate::error::{Error, Result};
use crate::model::{PredictionOutput, TaskKind};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceNorm {
    #[default]
    L1,
    L2,
}

impl fmt::Display for DistanceNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DistanceNorm::L1 => "l1",
            DistanceNorm::L2 => "l2",
        })
    }
}

impl FromStr for DistanceNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(DistanceNorm::L1),
            "l2" => Ok(DistanceNorm::L2),
            other => Err(Error::InvalidArgument(format!("unknown norm {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureScale {
    /// Population standard deviation over the whole dataset.
    Numeric { std: f64 },
    /// Probability that two random points share a value.
    Categorical { collision_probability: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureDistanceStats {
    pub features: Vec<(String, FeatureScale)>,
}

impl FeatureDistanceStats {
    /// Normalizers over every point of the snapshot, missing values excluded.
    pub fn compute(dataset: &Dataset) -> Self {
        let features = dataset
            .features()
            .iter()
            .enumerate()
            .map(|(j, f)| {
                let column = dataset.points().iter().map(|p| &p.values[j]);
                let scale = match f.kind {
                    FeatureKind::Numeric => {
                        let xs: Vec<f64> = column.filter_map(Value::as_number).collect();
                        FeatureScale::Numeric {
                            std: population_std(&xs),
                        }
                    }
                    FeatureKind::Categorical => {
                        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
                        let mut total = 0usize;
                        for v in column.filter(|v| !v.is_missing()) {
                            *counts.entry(v.label()).or_default() += 1;
                            total += 1;
                        }
                        let collision_probability = if total == 0 {
                            1.0
                        } else {
                            counts
                                .values()
                                .map(|&c| (c as f64 / total as f64).powi(2))
                                .sum()
                        };
                        FeatureScale::Categorical {
                            collision_probability,
                        }
                    }
                };
                (f.name.clone(), scale)
            })
            .collect();
        FeatureDistanceStats { features }
    }
}

pub(crate) fn population_std(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Distance contributed by one feature. A constant numeric feature (std 0)
/// contributes nothing. With exactly one side missing, numeric features
/// contribute 1 and categorical features their collision probability.
pub fn feature_distance(scale: &FeatureScale, a: &Value, b: &Value) -> f64 {
    match (a, b) {
        (Value::Missing, Value::Missing) => 0.0,
        (Value::Missing, _) | (_, Value::Missing) => match scale {
            FeatureScale::Numeric { .. } => 1.0,
            FeatureScale::Categorical {
                collision_probability,
            } => *collision_probability,
        },
        _ => match scale {
            FeatureScale::Numeric { std } => match (a.as_number(), b.as_number()) {
                (Some(x), Some(y)) if *std > 0.0 => (x - y).abs() / std,
                _ => 0.0,
            },
            FeatureScale::Categorical {
                collision_probability,
            } => {
                if a.label() == b.label() {
                    0.0
                } else {
                    *collision_probability
                }
            }
        },
    }
}

/// Aggregated distance between two rows in schema order. `mask` selects the
/// features that take part (all when `None`).
pub fn datapoint_distance(
    a: &[Value],
    b: &[Value],
    norm: DistanceNorm,
    stats: &FeatureDistanceStats,
    mask: Option<&[bool]>,
) -> f64 {
    let parts = stats
        .features
        .iter()
        .enumerate()
        .filter(|(j, _)| mask.is_none_or(|m| m[*j]))
        .map(|(j, (_, scale))| feature_distance(scale, &a[j], &b[j]));
    match norm {
        DistanceNorm::L1 => parts.sum(),
        DistanceNorm::L2 => parts.map(|d| d * d).sum::<f64>().sqrt(),
    }
}

/// How two predictions are judged to be different outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomePolicy {
    /// Binary: positive iff score >= threshold.
    Threshold(f64),
    /// Multiclass: highest-scoring class.
    Argmax,
    /// Regression: outcomes differ iff predictions differ by more than the margin.
    Margin(f64),
}

impl OutcomePolicy {
    /// 0.5 for binary, argmax for multiclass, and for regression a margin of
    /// one standard deviation of the predictions.
    pub fn default_for(task: TaskKind, predictions: &[PredictionOutput]) -> Self {
        match task {
            TaskKind::BinaryClassification => OutcomePolicy::Threshold(0.5),
            TaskKind::MultiClassification { .. } => OutcomePolicy::Argmax,
            TaskKind::Regression => {
                let ys: Vec<f64> = predictions.iter().map(PredictionOutput::score).collect();
                OutcomePolicy::Margin(population_std(&ys))
            }
        }
    }

    pub fn differs(&self, a: &PredictionOutput, b: &PredictionOutput) -> bool {
        match self {
            OutcomePolicy::Threshold(t) => (a.score() >= *t) != (b.score() >= *t),
            OutcomePolicy::Argmax => a.argmax() != b.argmax(),
            OutcomePolicy::Margin(m) => (a.score() - b.score()).abs() > *m,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureDelta {
    pub feature: String,
    pub anchor_value: Value,
    pub match_value: Value,
    pub distance: f64,
    pub differs: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CounterfactualResult {
    pub anchor_id: u64,
    pub match_id: u64,
    pub norm: DistanceNorm,
    pub distance: f64,
    pub per_feature_deltas: Vec<FeatureDelta>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CounterfactualOutcome {
    Found(CounterfactualResult),
    /// Every other point shares the anchor's outcome.
    NoCounterfactual { anchor_id: u64 },
}

impl CounterfactualOutcome {
    pub fn found(&self) -> Option<&CounterfactualResult> {
        match self {
            CounterfactualOutcome::Found(r) => Some(r),
            CounterfactualOutcome::NoCounterfactual { .. } => None,
        }
    }
}

/// Closest point (by id order on ties) whose outcome differs from the
/// anchor's. `predictions` are aligned with the dataset's point order.
pub fn nearest_counterfactual(
    dataset: &Dataset,
    predictions: &[PredictionOutput],
    anchor_id: u64,
    norm: DistanceNorm,
    policy: OutcomePolicy,
) -> Result<CounterfactualOutcome> {
    if predictions.len() != dataset.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} points",
            predictions.len(),
            dataset.len()
        )));
    }
    let anchor_pos = dataset.position(anchor_id)?;
    let anchor = &dataset.points()[anchor_pos];
    let stats = FeatureDistanceStats::compute(dataset);

    let mut best: Option<(usize, f64)> = None;
    for (i, (point, prediction)) in dataset.points().iter().zip(predictions).enumerate() {
        if i == anchor_pos || !policy.differs(&predictions[anchor_pos], prediction) {
            continue;
        }
        let d = datapoint_distance(&anchor.values, &point.values, norm, &stats, None);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }

    let Some((pos, distance)) = best else {
        return Ok(CounterfactualOutcome::NoCounterfactual { anchor_id });
    };
    let matched = &dataset.points()[pos];
    let per_feature_deltas = stats
        .features
        .iter()
        .enumerate()
        .map(|(j, (name, scale))| FeatureDelta {
            feature: name.clone(),
            anchor_value: anchor.values[j].clone(),
            match_value: matched.values[j].clone(),
            distance: feature_distance(scale, &anchor.values[j], &matched.values[j]),
            differs: anchor.values[j] != matched.values[j],
        })
        .collect();
    Ok(CounterfactualOutcome::Found(CounterfactualResult {
        anchor_id,
        match_id: matched.id,
        norm,
        distance,
        per_feature_deltas,
    }))
}

/// Adds `distance_{norm}_to_{anchor}` holding every point's distance to the
/// anchor. Returns the feature name actually used.
pub fn attach_distance_feature(dataset: &mut Dataset, anchor_id: u64, norm: DistanceNorm) -> Result<String> {
    let anchor = dataset.point(anchor_id)?.values.clone();
    let stats = FeatureDistanceStats::compute(dataset);
    let values = dataset
        .points()
        .iter()
        .map(|p| (p.id, datapoint_distance(&anchor, &p.values, norm, &stats, None)))
        .collect();
    Ok(dataset.add_derived_feature(&format!("distance_{norm}_to_{anchor_id}"), values))
}
