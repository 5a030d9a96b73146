//! Performance measures per model and per slice, cost-ratio threshold
//! selection and fairness-constrained per-slice thresholds.

mod fairness;
mod threshold;

use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{bin_column, Dataset, Value};
use crate::error::{Error, Result};
use crate::model::{PredictionOutput, TaskKind};

pub use fairness::{
    matched_quantity, optimize_fairness, optimize_thresholds, FairnessStrategy, ModelAssignment,
    SliceScores, SliceThreshold, ThresholdAssignment, DEFAULT_EPSILON, TARGET_STEP,
};
pub use threshold::{
    candidate_thresholds, optimize_single_threshold, roc_curve, threshold_sweep, RocCurve, RocPoint,
    ThresholdChoice, ThresholdPoint,
};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    /// fp / (fp + tn)
    pub fn fp_pct(&self) -> f64 {
        ratio(self.fp, self.fp + self.tn)
    }

    /// fn / (fn + tp)
    pub fn fn_pct(&self) -> f64 {
        ratio(self.fn_, self.fn_ + self.tp)
    }

    /// Share of points predicted positive.
    pub fn positive_rate(&self) -> f64 {
        ratio(self.tp + self.fp, self.total())
    }

    /// True-positive rate among ground-truth positives.
    pub fn tpr(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn cost(&self, ratio: CostRatio) -> f64 {
        ratio.value() * self.fp as f64 + self.fn_ as f64
    }

    pub fn add(&self, other: &ConfusionMatrix) -> ConfusionMatrix {
        ConfusionMatrix {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            tn: self.tn + other.tn,
            fn_: self.fn_ + other.fn_,
        }
    }
}

/// Counts at `threshold`; a point is predicted positive iff its score is at
/// least the threshold.
pub fn confusion_at(scores: &[f64], labels: &[bool], threshold: f64) -> ConfusionMatrix {
    let mut cm = ConfusionMatrix::default();
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fp += 1,
            (false, false) => cm.tn += 1,
            (false, true) => cm.fn_ += 1,
        }
    }
    cm
}

/// Cost of a false positive relative to a false negative.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
#[serde(transparent)]
pub struct CostRatio(f64);

impl CostRatio {
    pub fn new(r: f64) -> Result<Self> {
        if r.is_finite() && r > 0.0 {
            Ok(CostRatio(r))
        } else {
            Err(Error::InvalidArgument(format!("cost ratio must be positive, got {r}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for CostRatio {
    fn default() -> Self {
        CostRatio(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegressionMetrics {
    /// Mean of `pred - target`.
    pub mean_error: f64,
    pub mean_absolute_error: f64,
    pub mean_squared_error: f64,
}

pub fn regression_metrics(preds: &[f64], targets: &[f64]) -> Result<RegressionMetrics> {
    if preds.len() != targets.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions but {} targets",
            preds.len(),
            targets.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = preds.len() as f64;
    let (mut e, mut ae, mut se) = (0.0, 0.0, 0.0);
    for (p, t) in preds.iter().zip(targets) {
        let d = p - t;
        e += d;
        ae += d.abs();
        se += d * d;
    }
    Ok(RegressionMetrics {
        mean_error: e / n,
        mean_absolute_error: ae / n,
        mean_squared_error: se / n,
    })
}

/// Which feature holds ground truth and how to read it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthBinding {
    pub feature: String,
    /// Label value of the positive class (binary tasks).
    #[serde(default)]
    pub positive: Option<String>,
    /// Label values in class-index order (multiclass tasks).
    #[serde(default)]
    pub classes: Option<Vec<String>>,
}

impl GroundTruthBinding {
    pub fn binary(feature: impl Into<String>, positive: impl Into<String>) -> Self {
        GroundTruthBinding {
            feature: feature.into(),
            positive: Some(positive.into()),
            classes: None,
        }
    }

    fn column<'a>(&self, dataset: &'a Dataset) -> Result<impl Iterator<Item = (u64, &'a Value)> + 'a> {
        let j = dataset.feature_index(&self.feature)?;
        Ok(dataset.points().iter().map(move |p| (p.id, &p.values[j])))
    }

    fn missing_label(&self, id: u64) -> Error {
        Error::InvalidArgument(format!("point {id} has no {:?} label", self.feature))
    }

    pub fn binary_labels(&self, dataset: &Dataset) -> Result<Vec<bool>> {
        let positive = self
            .positive
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("binary labels need a positive value".into()))?;
        self.column(dataset)?
            .map(|(id, v)| {
                if v.is_missing() {
                    Err(self.missing_label(id))
                } else {
                    Ok(&v.label() == positive)
                }
            })
            .collect()
    }

    pub fn class_labels(&self, dataset: &Dataset) -> Result<Vec<usize>> {
        let classes = self
            .classes
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("multiclass labels need a class order".into()))?;
        self.column(dataset)?
            .map(|(id, v)| {
                let label = v.label();
                classes.iter().position(|c| *c == label).ok_or_else(|| {
                    if v.is_missing() {
                        self.missing_label(id)
                    } else {
                        Error::InvalidArgument(format!("point {id}: label {label:?} is not a listed class"))
                    }
                })
            })
            .collect()
    }

    pub fn regression_targets(&self, dataset: &Dataset) -> Result<Vec<f64>> {
        self.column(dataset)?
            .map(|(id, v)| v.as_number().ok_or_else(|| self.missing_label(id)))
            .collect()
    }
}

fn default_bins() -> usize {
    10
}

/// Slice by zero, one or two features. Zero features is a single slice
/// holding the whole dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceSpec {
    pub features: Vec<String>,
    #[serde(default = "default_bins")]
    pub numeric_bin_count: usize,
}

impl Default for SliceSpec {
    fn default() -> Self {
        SliceSpec {
            features: Vec::new(),
            numeric_bin_count: default_bins(),
        }
    }
}

impl SliceSpec {
    pub fn by(features: &[&str]) -> Self {
        SliceSpec {
            features: features.iter().map(|f| f.to_string()).collect(),
            numeric_bin_count: default_bins(),
        }
    }
}

/// Key of the single slice produced when no slicing features are given.
pub const ALL_POINTS_SLICE: &str = "all";

#[derive(Debug, Clone, PartialEq)]
pub struct Slice {
    /// `feature=value` pairs joined with ` & `.
    pub key: String,
    pub values: Vec<String>,
    /// Positions into the dataset's point order.
    pub indices: Vec<usize>,
}

/// Splits the dataset into non-empty slices. Numeric features are bucketed
/// like facet bins and missing values form their own slice. Slices come
/// out in bin order.
pub fn partition(dataset: &Dataset, spec: &SliceSpec) -> Result<Vec<Slice>> {
    if spec.features.len() > 2 {
        return Err(Error::InvalidArgument("slice by at most two features".into()));
    }
    if spec.features.len() == 2 && spec.features[0] == spec.features[1] {
        return Err(Error::InvalidArgument("slice features must differ".into()));
    }
    if spec.numeric_bin_count == 0 {
        return Err(Error::InvalidArgument("numeric_bin_count must be at least 1".into()));
    }
    if spec.features.is_empty() {
        return Ok(vec![Slice {
            key: ALL_POINTS_SLICE.to_string(),
            values: Vec::new(),
            indices: (0..dataset.len()).collect(),
        }]);
    }
    let binned = spec
        .features
        .iter()
        .map(|f| Ok(bin_column(&dataset.column(f)?, spec.numeric_bin_count)))
        .collect::<Result<Vec<_>>>()?;

    let mut groups: BTreeMap<Vec<usize>, Vec<usize>> = BTreeMap::new();
    for i in 0..dataset.len() {
        let key: Vec<usize> = binned.iter().map(|(_, idx)| idx[i]).collect();
        groups.entry(key).or_default().push(i);
    }
    Ok(groups
        .into_iter()
        .map(|(bins, indices)| {
            let values: Vec<String> = bins
                .iter()
                .zip(&binned)
                .map(|(&b, (axis, _))| axis.labels[b].clone())
                .collect();
            let key = spec
                .features
                .iter()
                .zip(&values)
                .map(|(f, v)| format!("{f}={v}"))
                .collect::<Vec<_>>()
                .join(" & ");
            Slice { key, values, indices }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SliceSort {
    /// Largest slices first.
    #[default]
    Count,
    Alphabetical,
    /// Highest accuracy first (classification).
    Accuracy,
    /// Smallest absolute mean error first (regression).
    MeanError,
}

impl FromStr for SliceSort {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "count" | "size" => Ok(SliceSort::Count),
            "alpha" | "alphabetical" => Ok(SliceSort::Alphabetical),
            "accuracy" => Ok(SliceSort::Accuracy),
            "mean-error" => Ok(SliceSort::MeanError),
            other => Err(Error::InvalidArgument(format!("unknown slice sort {other:?}"))),
        }
    }
}

/// Positive-classification thresholds used when measuring binary models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Thresholds {
    Global(f64),
    PerSlice {
        thresholds: BTreeMap<String, f64>,
        /// Used for slices without an entry.
        default: f64,
    },
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds::Global(0.5)
    }
}

impl Thresholds {
    pub fn for_slice(&self, key: &str) -> f64 {
        match self {
            Thresholds::Global(t) => *t,
            Thresholds::PerSlice { thresholds, default } => thresholds.get(key).copied().unwrap_or(*default),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Measures {
    Binary {
        confusion: ConfusionMatrix,
        accuracy: f64,
        fp_pct: f64,
        fn_pct: f64,
    },
    Multiclass {
        accuracy: f64,
        /// Rows are actual classes, columns predicted classes.
        class_confusion: Vec<Vec<usize>>,
    },
    Regression(RegressionMetrics),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SliceMetrics {
    pub slice_key: String,
    pub values: Vec<String>,
    pub count: usize,
    pub threshold: Option<f64>,
    #[serde(flatten)]
    pub measures: Measures,
}

impl SliceMetrics {
    pub fn confusion(&self) -> Option<&ConfusionMatrix> {
        match &self.measures {
            Measures::Binary { confusion, .. } => Some(confusion),
            _ => None,
        }
    }

    fn accuracy(&self) -> f64 {
        match &self.measures {
            Measures::Binary { accuracy, .. } | Measures::Multiclass { accuracy, .. } => *accuracy,
            Measures::Regression(_) => 0.0,
        }
    }

    fn abs_mean_error(&self) -> f64 {
        match &self.measures {
            Measures::Regression(m) => m.mean_error.abs(),
            _ => 0.0,
        }
    }
}

/// Positive-class scores of binary predictions, or a task error.
pub fn binary_scores(predictions: &[PredictionOutput]) -> Result<Vec<f64>> {
    predictions
        .iter()
        .map(|p| match p {
            PredictionOutput::Binary(s) => Ok(*s),
            _ => Err(Error::TaskMismatch("expected a binary classifier".into())),
        })
        .collect()
}

/// Table-1 measures for each slice. `predictions` are aligned with the
/// dataset's point order.
pub fn slice_metrics(
    dataset: &Dataset,
    predictions: &[PredictionOutput],
    task: TaskKind,
    binding: &GroundTruthBinding,
    slice_spec: &SliceSpec,
    thresholds: &Thresholds,
    sort: SliceSort,
) -> Result<Vec<SliceMetrics>> {
    if predictions.len() != dataset.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} points",
            predictions.len(),
            dataset.len()
        )));
    }
    if let Some(p) = predictions.iter().find(|p| !p.task_matches(task)) {
        return Err(Error::TaskMismatch(format!("prediction {p:?} does not fit {task:?}")));
    }
    let slices = partition(dataset, slice_spec)?;

    let mut out: Vec<SliceMetrics> = match task {
        TaskKind::BinaryClassification => {
            let labels = binding.binary_labels(dataset)?;
            let scores = binary_scores(predictions)?;
            slices
                .into_iter()
                .map(|s| {
                    let t = thresholds.for_slice(&s.key);
                    let sl: Vec<f64> = s.indices.iter().map(|&i| scores[i]).collect();
                    let ll: Vec<bool> = s.indices.iter().map(|&i| labels[i]).collect();
                    let cm = confusion_at(&sl, &ll, t);
                    SliceMetrics {
                        count: s.indices.len(),
                        slice_key: s.key,
                        values: s.values,
                        threshold: Some(t),
                        measures: Measures::Binary {
                            confusion: cm,
                            accuracy: cm.accuracy(),
                            fp_pct: cm.fp_pct(),
                            fn_pct: cm.fn_pct(),
                        },
                    }
                })
                .collect()
        }
        TaskKind::MultiClassification { num_classes } => {
            let labels = binding.class_labels(dataset)?;
            slices
                .into_iter()
                .map(|s| {
                    let mut matrix = vec![vec![0usize; num_classes]; num_classes];
                    for &i in &s.indices {
                        matrix[labels[i]][predictions[i].argmax()] += 1;
                    }
                    let correct: usize = (0..num_classes).map(|c| matrix[c][c]).sum();
                    SliceMetrics {
                        count: s.indices.len(),
                        slice_key: s.key,
                        values: s.values,
                        threshold: None,
                        measures: Measures::Multiclass {
                            accuracy: ratio(correct, s.indices.len()),
                            class_confusion: matrix,
                        },
                    }
                })
                .collect()
        }
        TaskKind::Regression => {
            let targets = binding.regression_targets(dataset)?;
            slices
                .into_iter()
                .map(|s| {
                    let preds: Vec<f64> = s.indices.iter().map(|&i| predictions[i].score()).collect();
                    let ts: Vec<f64> = s.indices.iter().map(|&i| targets[i]).collect();
                    Ok(SliceMetrics {
                        count: s.indices.len(),
                        slice_key: s.key,
                        values: s.values,
                        threshold: None,
                        measures: Measures::Regression(regression_metrics(&preds, &ts)?),
                    })
                })
                .collect::<Result<_>>()?
        }
    };

    sort_slices(&mut out, sort);
    Ok(out)
}

pub fn sort_slices(slices: &mut [SliceMetrics], sort: SliceSort) {
    match sort {
        SliceSort::Count => slices.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.slice_key.cmp(&b.slice_key))),
        SliceSort::Alphabetical => slices.sort_by(|a, b| a.slice_key.cmp(&b.slice_key)),
        SliceSort::Accuracy => slices.sort_by(|a, b| {
            b.accuracy()
                .total_cmp(&a.accuracy())
                .then_with(|| a.slice_key.cmp(&b.slice_key))
        }),
        SliceSort::MeanError => slices.sort_by(|a, b| {
            a.abs_mean_error()
                .total_cmp(&b.abs_mean_error())
                .then_with(|| a.slice_key.cmp(&b.slice_key))
        }),
    }
}
