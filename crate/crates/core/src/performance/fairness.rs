use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::threshold::{min_cost_threshold, require_both_classes, threshold_sweep, validate_scores};
use super::{
    binary_scores, confusion_at, optimize_single_threshold, partition, ConfusionMatrix, CostRatio,
    GroundTruthBinding, SliceSpec, Thresholds,
};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{ModelHandle, ModelSlot};

pub const DEFAULT_EPSILON: f64 = 0.01;
/// Spacing of the target grid scanned by the parity strategies.
pub const TARGET_STEP: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FairnessStrategy {
    /// One threshold for every point, chosen by cost ratio alone.
    Single,
    /// Independent cost-optimal threshold per slice.
    Group,
    /// Equal share of predicted positives per slice.
    DemographicParity,
    /// Equal true-positive rate among ground-truth positives per slice.
    EqualOpportunity,
    /// Equal accuracy per slice.
    EqualAccuracy,
}

impl FairnessStrategy {
    pub const ALL: [FairnessStrategy; 5] = [
        FairnessStrategy::Single,
        FairnessStrategy::Group,
        FairnessStrategy::DemographicParity,
        FairnessStrategy::EqualOpportunity,
        FairnessStrategy::EqualAccuracy,
    ];

    pub fn is_parity(self) -> bool {
        matches!(
            self,
            FairnessStrategy::DemographicParity | FairnessStrategy::EqualOpportunity | FairnessStrategy::EqualAccuracy
        )
    }
}

impl fmt::Display for FairnessStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FairnessStrategy::Single => "single",
            FairnessStrategy::Group => "group",
            FairnessStrategy::DemographicParity => "demographic-parity",
            FairnessStrategy::EqualOpportunity => "equal-opportunity",
            FairnessStrategy::EqualAccuracy => "equal-accuracy",
        })
    }
}

impl FromStr for FairnessStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        FairnessStrategy::ALL
            .into_iter()
            .find(|st| st.to_string() == norm)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown strategy {s:?}")))
    }
}

/// The per-slice quantity a parity strategy equalizes.
pub fn matched_quantity(strategy: FairnessStrategy, cm: &ConfusionMatrix) -> Option<f64> {
    match strategy {
        FairnessStrategy::DemographicParity => Some(cm.positive_rate()),
        FairnessStrategy::EqualOpportunity => Some(cm.tpr()),
        FairnessStrategy::EqualAccuracy => Some(cm.accuracy()),
        FairnessStrategy::Single | FairnessStrategy::Group => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SliceScores {
    pub key: String,
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SliceThreshold {
    pub slice_key: String,
    pub count: usize,
    pub threshold: f64,
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
    pub positive_rate: f64,
    pub tpr: f64,
    pub cost: f64,
}

impl SliceThreshold {
    fn new(key: &str, threshold: f64, confusion: ConfusionMatrix, ratio: CostRatio) -> Self {
        SliceThreshold {
            slice_key: key.to_string(),
            count: confusion.total(),
            threshold,
            confusion,
            accuracy: confusion.accuracy(),
            positive_rate: confusion.positive_rate(),
            tpr: confusion.tpr(),
            cost: confusion.cost(ratio),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdAssignment {
    pub strategy: FairnessStrategy,
    pub cost_ratio: CostRatio,
    pub epsilon: f64,
    /// Set for the single-threshold strategy only.
    pub global_threshold: Option<f64>,
    pub slices: Vec<SliceThreshold>,
    pub total_cost: f64,
    /// Target the parity scan settled on.
    pub target: Option<f64>,
    /// Max pairwise gap of the matched quantity (parity strategies).
    pub achieved_disparity: Option<f64>,
    pub parity_met: Option<bool>,
    pub warnings: Vec<String>,
}

impl ThresholdAssignment {
    pub fn thresholds(&self) -> Thresholds {
        match self.global_threshold {
            Some(t) => Thresholds::Global(t),
            None => Thresholds::PerSlice {
                thresholds: self.slices.iter().map(|s| (s.slice_key.clone(), s.threshold)).collect(),
                default: 0.5,
            },
        }
    }

    pub fn slice(&self, key: &str) -> Option<&SliceThreshold> {
        self.slices.iter().find(|s| s.slice_key == key)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelAssignment {
    pub model: ModelSlot,
    #[serde(flatten)]
    pub assignment: ThresholdAssignment,
}

/// One achievable value of the matched quantity and the cheapest
/// threshold reaching it.
#[derive(Debug, Clone, Copy)]
struct Reachable {
    q: f64,
    cost: f64,
    threshold: f64,
    confusion: ConfusionMatrix,
}

fn achievable(slice: &SliceScores, strategy: FairnessStrategy, ratio: CostRatio) -> Vec<Reachable> {
    let mut options: Vec<Reachable> = Vec::new();
    let mut seen: HashMap<u64, usize> = HashMap::new();
    for point in threshold_sweep(&slice.scores, &slice.labels) {
        let q = matched_quantity(strategy, &point.confusion).expect("parity strategy");
        let cost = point.confusion.cost(ratio);
        let candidate = Reachable {
            q,
            cost,
            threshold: point.threshold,
            confusion: point.confusion,
        };
        // sweep is ascending in threshold, so strict comparison keeps the lowest one
        match seen.get(&q.to_bits()) {
            Some(&i) if cost < options[i].cost => options[i] = candidate,
            Some(_) => {}
            None => {
                seen.insert(q.to_bits(), options.len());
                options.push(candidate);
            }
        }
    }
    options.sort_by(|a, b| a.q.total_cmp(&b.q));
    options
}

/// Option whose quantity is nearest `target`; ties go to lower cost, then
/// lower threshold.
fn nearest(options: &[Reachable], target: f64) -> &Reachable {
    let i = options.partition_point(|o| o.q < target);
    let mut best: Option<&Reachable> = None;
    for o in options[i.saturating_sub(1)..(i + 1).min(options.len())].iter() {
        let better = match best {
            None => true,
            Some(b) => {
                let (d, db) = ((o.q - target).abs(), (b.q - target).abs());
                d < db || (d == db && (o.cost < b.cost || (o.cost == b.cost && o.threshold < b.threshold)))
            }
        };
        if better {
            best = Some(o);
        }
    }
    best.expect("options are never empty")
}

fn target_scan(
    slices: &[SliceScores],
    strategy: FairnessStrategy,
    ratio: CostRatio,
) -> (f64, f64, Vec<SliceThreshold>) {
    let per_slice: Vec<Vec<Reachable>> = slices.iter().map(|s| achievable(s, strategy, ratio)).collect();

    let steps = (1.0 / TARGET_STEP).round() as usize;
    let mut targets: Vec<f64> = (0..=steps).map(|k| k as f64 / steps as f64).collect();
    // grid plus every achievable value
    targets.extend(per_slice.iter().flatten().map(|o| o.q));
    targets.sort_by(f64::total_cmp);
    targets.dedup();

    let mut best: Option<(f64, f64, f64)> = None;
    for &tau in &targets {
        let (mut lo, mut hi, mut cost) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
        for options in &per_slice {
            let o = nearest(options, tau);
            lo = lo.min(o.q);
            hi = hi.max(o.q);
            cost += o.cost;
        }
        let disparity = hi - lo;
        if best.is_none_or(|(_, bd, bc)| disparity < bd || (disparity == bd && cost < bc)) {
            best = Some((tau, disparity, cost));
        }
    }
    let (tau, disparity, _) = best.expect("target grid is never empty");
    let chosen = slices
        .iter()
        .zip(&per_slice)
        .map(|(s, options)| {
            let o = nearest(options, tau);
            SliceThreshold::new(&s.key, o.threshold, o.confusion, ratio)
        })
        .collect();
    (tau, disparity, chosen)
}

/// Per-slice positive-classification thresholds under `strategy`. Empty
/// slices are dropped with a warning.
pub fn optimize_thresholds(
    slices: &[SliceScores],
    strategy: FairnessStrategy,
    ratio: CostRatio,
    epsilon: f64,
) -> Result<ThresholdAssignment> {
    if !(epsilon.is_finite() && epsilon >= 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be non-negative, got {epsilon}")));
    }
    let mut warnings = Vec::new();
    let mut kept: Vec<SliceScores> = Vec::with_capacity(slices.len());
    for s in slices {
        validate_scores(&s.scores, &s.labels)?;
        if s.scores.is_empty() {
            warnings.push(format!("slice {:?} is empty and was dropped", s.key));
        } else {
            kept.push(s.clone());
        }
    }
    if kept.is_empty() {
        return Err(Error::EmptyInput);
    }
    if strategy != FairnessStrategy::Single && kept.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "strategy {strategy} needs at least two non-empty slices"
        )));
    }

    let mut assignment = ThresholdAssignment {
        strategy,
        cost_ratio: ratio,
        epsilon,
        global_threshold: None,
        slices: Vec::new(),
        total_cost: 0.0,
        target: None,
        achieved_disparity: None,
        parity_met: None,
        warnings,
    };
    match strategy {
        FairnessStrategy::Single => {
            let scores: Vec<f64> = kept.iter().flat_map(|s| s.scores.iter().copied()).collect();
            let labels: Vec<bool> = kept.iter().flat_map(|s| s.labels.iter().copied()).collect();
            let t = optimize_single_threshold(&scores, &labels, ratio)?.threshold;
            assignment.global_threshold = Some(t);
            assignment.slices = kept
                .iter()
                .map(|s| SliceThreshold::new(&s.key, t, confusion_at(&s.scores, &s.labels, t), ratio))
                .collect();
        }
        FairnessStrategy::Group => {
            let all: Vec<bool> = kept.iter().flat_map(|s| s.labels.iter().copied()).collect();
            require_both_classes(&all)?;
            assignment.slices = kept
                .iter()
                .map(|s| {
                    let c = min_cost_threshold(&s.scores, &s.labels, ratio);
                    SliceThreshold::new(&s.key, c.threshold, c.confusion, ratio)
                })
                .collect();
        }
        _ => {
            let all: Vec<bool> = kept.iter().flat_map(|s| s.labels.iter().copied()).collect();
            require_both_classes(&all)?;
            if strategy == FairnessStrategy::EqualOpportunity {
                for s in kept.iter().filter(|s| !s.labels.iter().any(|&l| l)) {
                    assignment
                        .warnings
                        .push(format!("slice {:?} has no positive labels; its true-positive rate is 0", s.key));
                }
            }
            let (tau, disparity, chosen) = target_scan(&kept, strategy, ratio);
            assignment.target = Some(tau);
            assignment.achieved_disparity = Some(disparity);
            assignment.parity_met = Some(disparity <= epsilon);
            assignment.slices = chosen;
        }
    }
    assignment.total_cost = assignment.slices.iter().map(|s| s.cost).sum();
    Ok(assignment)
}

/// Runs `strategy` for each binary model independently over the slices of
/// `dataset`.
pub fn optimize_fairness(
    dataset: &Dataset,
    models: &[&ModelHandle],
    binding: &GroundTruthBinding,
    slice_spec: &SliceSpec,
    strategy: FairnessStrategy,
    ratio: CostRatio,
    epsilon: f64,
) -> Result<Vec<ModelAssignment>> {
    if models.is_empty() {
        return Err(Error::NoModel(ModelSlot::Model1));
    }
    if let Some(m) = models.iter().find(|m| !m.task().is_binary()) {
        return Err(Error::TaskMismatch(format!(
            "fairness strategies need a binary classifier, {} is {:?}",
            m.slot(),
            m.task()
        )));
    }
    let labels = binding.binary_labels(dataset)?;
    let slices = partition(dataset, slice_spec)?;
    models
        .iter()
        .map(|m| {
            let scores = binary_scores(&m.predict_dataset(dataset)?)?;
            let inputs: Vec<SliceScores> = slices
                .iter()
                .map(|s| SliceScores {
                    key: s.key.clone(),
                    scores: s.indices.iter().map(|&i| scores[i]).collect(),
                    labels: s.indices.iter().map(|&i| labels[i]).collect(),
                })
                .collect();
            Ok(ModelAssignment {
                model: m.slot(),
                assignment: optimize_thresholds(&inputs, strategy, ratio, epsilon)?,
            })
        })
        .collect()
}
