//! JSON bodies shared by the CLI and the HTTP service. Every analysis is
//! wrapped in [`Versioned`] so callers can tell which dataset snapshot it
//! was computed against.

use serde::ser::SerializeMap;
use serde::{Serialize, Serializer};

use crate::counterfactual::{nearest_counterfactual, CounterfactualOutcome, DistanceNorm, OutcomePolicy};
use crate::dataset::{
    assign_bins, sort_features, BinAssignment, BinningSpec, Column, DataPoint, Dataset, DerivedFeature,
    FeatureKind, FeatureSchema, FeatureStatistics, SortKey, Value,
};
use crate::error::{Error, Result};
use crate::model::{ModelHandle, ModelInfo, ModelRegistry, ModelSlot, PredictionOutput, ScoreDelta, TaskKind};
use crate::pdp::{global_pdp, local_pdp, PdpCurve, PdpSpec};
use crate::performance::{
    binary_scores, optimize_fairness, optimize_single_threshold, roc_curve, slice_metrics, CostRatio,
    FairnessStrategy, GroundTruthBinding, ModelAssignment, RocCurve, SliceMetrics, SliceSort, SliceSpec,
    Thresholds,
};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Versioned<T> {
    pub snapshot_version: u64,
    #[serde(flatten)]
    pub body: T,
}

impl<T> Versioned<T> {
    pub fn new(dataset: &Dataset, body: T) -> Self {
        Versioned {
            snapshot_version: dataset.version(),
            body,
        }
    }
}

/// Pretty-printed JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report bodies always serialize");
    s.push('\n');
    s
}

/// Registered models, or just the one in `slot`.
pub fn select_models(registry: &ModelRegistry, slot: Option<ModelSlot>) -> Result<Vec<&ModelHandle>> {
    match slot {
        Some(slot) => Ok(vec![registry.get(slot)?.as_ref()]),
        None if registry.is_empty() => Err(Error::NoModel(ModelSlot::Model1)),
        None => Ok(registry.models()),
    }
}

/// Statistics in sort order, serialized as an object keyed by feature name.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStatsMap(pub Vec<FeatureStatistics>);

impl Serialize for FeatureStatsMap {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.0.len()))?;
        for s in &self.0 {
            map.serialize_entry(&s.name, s)?;
        }
        map.end()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsReport {
    pub point_count: usize,
    pub sort: SortKey,
    pub order: Vec<String>,
    pub features: FeatureStatsMap,
}

pub fn stats_report(dataset: &Dataset, sort: SortKey) -> Result<Versioned<StatsReport>> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput);
    }
    let stats = dataset.statistics();
    let order = sort_features(&stats, sort);
    let features = order
        .iter()
        .map(|name| stats.iter().find(|s| &s.name == name).cloned().expect("sorted names come from stats"))
        .collect();
    Ok(Versioned::new(
        dataset,
        StatsReport {
            point_count: dataset.len(),
            sort,
            order,
            features: FeatureStatsMap(features),
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointsPage {
    pub total: usize,
    pub offset: usize,
    pub schema: Vec<FeatureSchema>,
    pub points: Vec<DataPoint>,
    pub derived_features: Vec<DerivedFeature>,
}

pub fn points_page(dataset: &Dataset, offset: usize, limit: Option<usize>) -> Versioned<PointsPage> {
    let end = limit.map_or(dataset.len(), |l| offset.saturating_add(l).min(dataset.len()));
    let points = dataset.points().get(offset.min(end)..end).unwrap_or_default().to_vec();
    let ids: Vec<u64> = points.iter().map(|p| p.id).collect();
    let derived_features = dataset
        .derived_features()
        .iter()
        .map(|d| DerivedFeature {
            name: d.name.clone(),
            values: ids.iter().filter_map(|id| d.values.get(id).map(|v| (*id, *v))).collect(),
        })
        .collect();
    Versioned::new(
        dataset,
        PointsPage {
            total: dataset.len(),
            offset,
            schema: dataset.schema(),
            points,
            derived_features,
        },
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointPredictions {
    pub id: Option<u64>,
    pub predictions: Vec<SlotPrediction>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlotPrediction {
    pub model: ModelSlot,
    pub output: PredictionOutput,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictReport {
    pub results: Vec<PointPredictions>,
}

/// Predictions for stored points (`ids`) followed by inline rows laid out
/// in schema order.
pub fn predict_report(
    dataset: &Dataset,
    models: &[&ModelHandle],
    ids: &[u64],
    inline: &[Vec<Value>],
) -> Result<Versioned<PredictReport>> {
    let features = dataset.feature_names();
    let mut rows: Vec<&[Value]> = Vec::with_capacity(ids.len() + inline.len());
    for id in ids {
        rows.push(&dataset.point(*id)?.values);
    }
    rows.extend(inline.iter().map(Vec::as_slice));
    let mut results: Vec<PointPredictions> = ids
        .iter()
        .map(|id| Some(*id))
        .chain(inline.iter().map(|_| None))
        .map(|id| PointPredictions { id, predictions: Vec::new() })
        .collect();
    for model in models {
        for (r, output) in results.iter_mut().zip(model.predict_batch(&features, &rows)?) {
            r.predictions.push(SlotPrediction { model: model.slot(), output });
        }
    }
    Ok(Versioned::new(dataset, PredictReport { results }))
}

/// Reads an inline point given as `{feature: value}`; absent features are
/// missing.
pub fn row_from_object(dataset: &Dataset, object: &serde_json::Map<String, serde_json::Value>) -> Result<Vec<Value>> {
    if let Some(unknown) = object.keys().find(|k| dataset.feature_index(k).is_err()) {
        return Err(Error::UnknownFeature(unknown.clone()));
    }
    dataset
        .features()
        .iter()
        .map(|f| {
            let v: Value = match object.get(&f.name) {
                None => Value::Missing,
                Some(json) => serde_json::from_value(json.clone()).map_err(|e| Error::Malformed {
                    row: 0,
                    column: f.name.clone(),
                    message: e.to_string(),
                })?,
            };
            let ok = match (f.kind, &v) {
                (_, Value::Missing) => true,
                (FeatureKind::Numeric, Value::Number(x)) => x.is_finite(),
                (FeatureKind::Categorical, Value::Text(_)) => true,
                _ => false,
            };
            if ok {
                Ok(v)
            } else {
                Err(Error::TypeMismatch {
                    feature: f.name.clone(),
                    expected: if f.kind == FeatureKind::Numeric { "numeric" } else { "categorical" },
                })
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelDelta {
    pub model: ModelSlot,
    pub before: PredictionOutput,
    pub after: PredictionOutput,
    #[serde(flatten)]
    pub change: ScoreDelta,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EditReport {
    pub point: DataPoint,
    pub scores: Vec<ModelDelta>,
}

/// Fields derived from model output that facet views can bin or color by:
/// `{slot}.score`, `{slot}.predicted` and, given ground truth,
/// `{slot}.correct` (classifiers) or `{slot}.error` (regression).
pub fn model_fields(
    dataset: &Dataset,
    models: &[&ModelHandle],
    binding: Option<&GroundTruthBinding>,
) -> Result<Vec<Column>> {
    let mut columns = Vec::new();
    for model in models {
        let predictions = model.predict_dataset(dataset)?;
        let slot = model.slot();
        let predicted: Vec<usize> = predictions
            .iter()
            .map(|p| match p {
                PredictionOutput::Binary(s) => usize::from(*s >= 0.5),
                other => other.argmax(),
            })
            .collect();
        columns.push(Column {
            name: format!("{slot}.score"),
            kind: FeatureKind::Numeric,
            values: predictions
                .iter()
                .map(|p| match p {
                    PredictionOutput::Multiclass(v) => Value::Number(v[p.argmax()]),
                    other => Value::Number(other.score()),
                })
                .collect(),
        });
        if model.task() != TaskKind::Regression {
            columns.push(Column {
                name: format!("{slot}.predicted"),
                kind: FeatureKind::Categorical,
                values: predicted.iter().map(|c| Value::Text(c.to_string())).collect(),
            });
        }
        let Some(binding) = binding else { continue };
        match model.task() {
            TaskKind::BinaryClassification => {
                let labels = binding.binary_labels(dataset)?;
                columns.push(correctness(slot, predicted.iter().zip(&labels).map(|(&p, &l)| (p == 1) == l)));
            }
            TaskKind::MultiClassification { .. } => {
                let labels = binding.class_labels(dataset)?;
                columns.push(correctness(slot, predicted.iter().zip(&labels).map(|(p, l)| p == l)));
            }
            TaskKind::Regression => {
                let targets = binding.regression_targets(dataset)?;
                columns.push(Column {
                    name: format!("{slot}.error"),
                    kind: FeatureKind::Numeric,
                    values: predictions.iter().zip(&targets).map(|(p, t)| Value::Number(p.score() - t)).collect(),
                });
            }
        }
    }
    Ok(columns)
}

fn correctness(slot: ModelSlot, hits: impl Iterator<Item = bool>) -> Column {
    Column {
        name: format!("{slot}.correct"),
        kind: FeatureKind::Categorical,
        values: hits
            .map(|ok| Value::Text(if ok { "correct" } else { "incorrect" }.to_string()))
            .collect(),
    }
}

pub fn bins_report(
    dataset: &Dataset,
    models: &[&ModelHandle],
    spec: &BinningSpec,
    binding: Option<&GroundTruthBinding>,
) -> Result<Versioned<BinAssignment>> {
    let names = [&spec.x_feature, &spec.y_feature, &spec.color_feature];
    let needs_models = names
        .iter()
        .filter_map(|n| n.as_deref())
        .any(|n| dataset.column(n).is_err());
    let fields = if needs_models {
        model_fields(dataset, models, binding)?
    } else {
        Vec::new()
    };
    Ok(Versioned::new(dataset, assign_bins(dataset, spec, Some(&fields))?))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CounterfactualReport {
    pub model: ModelSlot,
    pub policy: OutcomePolicy,
    #[serde(flatten)]
    pub outcome: CounterfactualOutcome,
}

pub fn counterfactual_report(
    dataset: &Dataset,
    model: &ModelHandle,
    point_id: u64,
    norm: DistanceNorm,
) -> Result<Versioned<CounterfactualReport>> {
    dataset.point(point_id)?;
    let predictions = model.predict_dataset(dataset)?;
    let policy = OutcomePolicy::default_for(model.task(), &predictions);
    let outcome = nearest_counterfactual(dataset, &predictions, point_id, norm, policy)?;
    Ok(Versioned::new(
        dataset,
        CounterfactualReport {
            model: model.slot(),
            policy,
            outcome,
        },
    ))
}

/// Local curve when `point_id` is set, global otherwise.
pub fn pdp_report(
    dataset: &Dataset,
    models: &[&ModelHandle],
    point_id: Option<u64>,
    spec: &PdpSpec,
    progress: Option<&mut dyn FnMut(usize, usize)>,
) -> Result<Versioned<PdpCurve>> {
    let curve = match point_id {
        Some(id) => local_pdp(dataset, models, id, spec)?,
        None => global_pdp(dataset, models, spec, progress)?,
    };
    Ok(Versioned::new(dataset, curve))
}

/// Where the performance thresholds come from.
#[derive(Debug, Clone, PartialEq)]
pub enum ThresholdChoice {
    Fixed(Thresholds),
    /// Per model, the single threshold minimizing `r * FP + FN`.
    Optimize(CostRatio),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelPerformance {
    #[serde(flatten)]
    pub model: ModelInfo,
    /// Global threshold, when one applies to every slice.
    pub threshold: Option<f64>,
    pub cost_ratio: Option<CostRatio>,
    pub overall: SliceMetrics,
    pub slices: Vec<SliceMetrics>,
    pub roc: Option<RocCurve>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerformanceReport {
    pub label: String,
    pub slice_by: Vec<String>,
    pub models: Vec<ModelPerformance>,
}

pub fn performance_report(
    dataset: &Dataset,
    models: &[&ModelHandle],
    binding: &GroundTruthBinding,
    slice_spec: &SliceSpec,
    thresholds: &ThresholdChoice,
    sort: SliceSort,
) -> Result<Versioned<PerformanceReport>> {
    if models.is_empty() {
        return Err(Error::NoModel(ModelSlot::Model1));
    }
    let mut out = Vec::with_capacity(models.len());
    for model in models {
        let task = model.task();
        let predictions = model.predict_dataset(dataset)?;
        let (roc, fixed, ratio) = if task.is_binary() {
            let scores = binary_scores(&predictions)?;
            let labels = binding.binary_labels(dataset)?;
            let roc = roc_curve(&scores, &labels).ok();
            match thresholds {
                ThresholdChoice::Fixed(t) => (roc, t.clone(), None),
                ThresholdChoice::Optimize(r) => {
                    let t = optimize_single_threshold(&scores, &labels, *r)?.threshold;
                    (roc, Thresholds::Global(t), Some(*r))
                }
            }
        } else {
            (None, Thresholds::default(), None)
        };
        let overall_threshold = match &fixed {
            Thresholds::Global(t) => Some(*t),
            Thresholds::PerSlice { .. } => None,
        };
        let slices = slice_metrics(dataset, &predictions, task, binding, slice_spec, &fixed, sort)?;
        let overall = if overall_threshold.is_some() || !task.is_binary() {
            let whole = Thresholds::Global(overall_threshold.unwrap_or(0.5));
            slice_metrics(dataset, &predictions, task, binding, &SliceSpec::default(), &whole, sort)?.remove(0)
        } else {
            combine_binary(&slices)
        };
        out.push(ModelPerformance {
            model: model.info(),
            threshold: if task.is_binary() { overall_threshold } else { None },
            cost_ratio: ratio,
            overall,
            slices,
            roc,
        });
    }
    Ok(Versioned::new(
        dataset,
        PerformanceReport {
            label: binding.feature.clone(),
            slice_by: slice_spec.features.clone(),
            models: out,
        },
    ))
}

fn combine_binary(slices: &[SliceMetrics]) -> SliceMetrics {
    use crate::performance::{ConfusionMatrix, Measures, ALL_POINTS_SLICE};
    let cm = slices
        .iter()
        .filter_map(SliceMetrics::confusion)
        .fold(ConfusionMatrix::default(), |acc, c| acc.add(c));
    SliceMetrics {
        slice_key: ALL_POINTS_SLICE.to_string(),
        values: Vec::new(),
        count: cm.total(),
        threshold: None,
        measures: Measures::Binary {
            confusion: cm,
            accuracy: cm.accuracy(),
            fp_pct: cm.fp_pct(),
            fn_pct: cm.fn_pct(),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FairnessReport {
    pub label: String,
    pub slice_by: Vec<String>,
    pub strategy: FairnessStrategy,
    pub epsilon: f64,
    pub models: Vec<ModelAssignment>,
}

pub fn fairness_report(
    dataset: &Dataset,
    models: &[&ModelHandle],
    binding: &GroundTruthBinding,
    slice_spec: &SliceSpec,
    strategy: FairnessStrategy,
    ratio: CostRatio,
    epsilon: f64,
) -> Result<Versioned<FairnessReport>> {
    let assignments = optimize_fairness(dataset, models, binding, slice_spec, strategy, ratio, epsilon)?;
    Ok(Versioned::new(
        dataset,
        FairnessReport {
            label: binding.feature.clone(),
            slice_by: slice_spec.features.clone(),
            strategy,
            epsilon,
            models: assignments,
        },
    ))
}
