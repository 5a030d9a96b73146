//! Partial dependence: model scores as one feature sweeps its range, for a
//! single point (local) or averaged over every point (global).

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, FeatureKind, Value};
use crate::error::{Error, Result};
use crate::model::{ModelHandle, ModelSlot, PredictionOutput, TaskKind};

/// A series whose scores spread less than this is flat: the model ignores
/// the feature over the swept range.
pub const FLAT_TOLERANCE: f64 = 1e-12;
/// Default number of categorical values swept.
pub const TOP_CATEGORIES: usize = 10;

fn default_points() -> usize {
    10
}

fn default_top_n() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdpSpec {
    pub feature: String,
    /// Overrides the observed `[min, max]` for numeric features.
    #[serde(default)]
    pub range: Option<(f64, f64)>,
    #[serde(default = "default_points")]
    pub num_points: usize,
    /// Categorical values to sweep; defaults to the most common ones.
    #[serde(default)]
    pub categorical_values: Option<Vec<String>>,
    /// Classes plotted for multiclass models.
    #[serde(default = "default_top_n")]
    pub top_n: usize,
    /// Classification thresholds drawn on the chart; binary models without
    /// an entry use 0.5.
    #[serde(default)]
    pub thresholds: BTreeMap<ModelSlot, f64>,
}

impl PdpSpec {
    pub fn new(feature: impl Into<String>) -> Self {
        PdpSpec {
            feature: feature.into(),
            range: None,
            num_points: default_points(),
            categorical_values: None,
            top_n: default_top_n(),
            thresholds: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PdpSeries {
    pub model: ModelSlot,
    /// Class index for classifiers (1 is the positive class for binary
    /// models); absent for regression.
    pub class: Option<usize>,
    pub ys: Vec<f64>,
    pub flat: bool,
}

impl PdpSeries {
    pub fn spread(&self) -> f64 {
        let (lo, hi) = self
            .ys
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &y| (lo.min(y), hi.max(y)));
        if self.ys.is_empty() {
            0.0
        } else {
            hi - lo
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelThreshold {
    pub model: ModelSlot,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PdpCurve {
    pub feature: String,
    pub global: bool,
    pub point_id: Option<u64>,
    pub xs: Vec<Value>,
    pub series: Vec<PdpSeries>,
    pub original_value: Option<Value>,
    pub thresholds: Vec<ModelThreshold>,
}

/// Features a PDP can be drawn for: everything except ID-like features whose
/// values are all distinct (with more than one point). Derived features are
/// never eligible.
pub fn eligible_features(dataset: &Dataset) -> Vec<String> {
    let n = dataset.len();
    dataset
        .schema()
        .into_iter()
        .filter(|f| n < 2 || f.distinct_count < n)
        .map(|f| f.name)
        .collect()
}

fn check_eligible(dataset: &Dataset, feature: &str) -> Result<usize> {
    let j = dataset.feature_index(feature).map_err(|e| {
        if dataset.derived_features().iter().any(|d| d.name == feature) {
            Error::InvalidArgument(format!("derived feature {feature:?} has no partial dependence"))
        } else {
            e
        }
    })?;
    if !eligible_features(dataset).iter().any(|f| f == feature) {
        return Err(Error::InvalidArgument(format!(
            "feature {feature:?} has a unique value per point"
        )));
    }
    Ok(j)
}

/// The x grid: `num_points` evenly spaced values over the observed (or
/// overridden) range with both endpoints, or the selected categories.
pub fn sweep_values(dataset: &Dataset, spec: &PdpSpec) -> Result<Vec<Value>> {
    let j = dataset.feature_index(&spec.feature)?;
    match dataset.features()[j].kind {
        FeatureKind::Numeric => {
            if spec.num_points < 2 {
                return Err(Error::InvalidArgument("num_points must be at least 2".into()));
            }
            let (lo, hi) = match spec.range {
                Some((lo, hi)) => {
                    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                        return Err(Error::InvalidArgument(format!("invalid range {lo}:{hi}")));
                    }
                    (lo, hi)
                }
                None => {
                    let xs = dataset.points().iter().filter_map(|p| p.values[j].as_number());
                    let (lo, hi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
                        (lo.min(x), hi.max(x))
                    });
                    if !lo.is_finite() {
                        return Err(Error::InvalidArgument(format!(
                            "feature {:?} has no observed values; give a range",
                            spec.feature
                        )));
                    }
                    (lo, hi)
                }
            };
            if lo == hi {
                return Ok(vec![Value::Number(lo)]);
            }
            let steps = (spec.num_points - 1) as f64;
            Ok((0..spec.num_points)
                .map(|i| {
                    if i + 1 == spec.num_points {
                        Value::Number(hi)
                    } else {
                        Value::Number(lo + (hi - lo) * i as f64 / steps)
                    }
                })
                .collect())
        }
        FeatureKind::Categorical => {
            if spec.range.is_some() {
                return Err(Error::InvalidArgument("range applies to numeric features only".into()));
            }
            if let Some(values) = &spec.categorical_values {
                if values.is_empty() {
                    return Err(Error::InvalidArgument("categorical_values is empty".into()));
                }
                return Ok(values.iter().map(|v| Value::Text(v.clone())).collect());
            }
            let mut counts: HashMap<&str, usize> = HashMap::new();
            for p in dataset.points() {
                if let Value::Text(s) = &p.values[j] {
                    *counts.entry(s.as_str()).or_default() += 1;
                }
            }
            let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
            ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
            if ranked.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "feature {:?} has no observed values",
                    spec.feature
                )));
            }
            Ok(ranked
                .into_iter()
                .take(TOP_CATEGORIES)
                .map(|(v, _)| Value::Text(v.to_string()))
                .collect())
        }
    }
}

/// Classes plotted for one model, ordered by `reference` scores.
fn plotted_classes(task: TaskKind, reference: &[f64], top_n: usize) -> Vec<Option<usize>> {
    match task {
        TaskKind::BinaryClassification => vec![Some(1)],
        TaskKind::Regression => vec![None],
        TaskKind::MultiClassification { num_classes } => {
            let mut classes: Vec<usize> = (0..num_classes).collect();
            classes.sort_by(|&a, &b| reference[b].total_cmp(&reference[a]).then(a.cmp(&b)));
            classes.into_iter().take(top_n.max(1)).map(Some).collect()
        }
    }
}

fn class_value(output: &PredictionOutput, class: Option<usize>) -> f64 {
    match class {
        Some(c) => output.class_score(c),
        None => output.score(),
    }
}

fn thresholds_for(models: &[&ModelHandle], spec: &PdpSpec) -> Vec<ModelThreshold> {
    models
        .iter()
        .filter(|m| m.task().is_binary())
        .map(|m| ModelThreshold {
            model: m.slot(),
            threshold: spec.thresholds.get(&m.slot()).copied().unwrap_or(0.5),
        })
        .collect()
}

fn with_value(values: &[Value], j: usize, x: &Value) -> Vec<Value> {
    let mut row = values.to_vec();
    row[j] = x.clone();
    row
}

pub fn local_pdp(dataset: &Dataset, models: &[&ModelHandle], point_id: u64, spec: &PdpSpec) -> Result<PdpCurve> {
    let point = dataset.point(point_id)?;
    let j = check_eligible(dataset, &spec.feature)?;
    let xs = sweep_values(dataset, spec)?;
    let features = dataset.feature_names();

    let rows: Vec<Vec<Value>> = xs.iter().map(|x| with_value(&point.values, j, x)).collect();
    let refs: Vec<&[Value]> = rows.iter().map(Vec::as_slice).collect();

    let mut series = Vec::new();
    for model in models {
        let current = model.predict_batch(&features, &[point.values.as_slice()])?;
        let reference: Vec<f64> = (0..model.task().output_width())
            .map(|c| current[0].class_score(c))
            .collect();
        let outputs = model.predict_batch(&features, &refs)?;
        for class in plotted_classes(model.task(), &reference, spec.top_n) {
            series.push(finish_series(
                model.slot(),
                class,
                outputs.iter().map(|o| class_value(o, class)).collect(),
            ));
        }
    }

    Ok(PdpCurve {
        feature: spec.feature.clone(),
        global: false,
        point_id: Some(point_id),
        xs,
        series,
        original_value: Some(point.values[j].clone()),
        thresholds: thresholds_for(models, spec),
    })
}

/// Global partial dependence. `progress` is called with (done, total) after
/// each grid value per model.
pub fn global_pdp(
    dataset: &Dataset,
    models: &[&ModelHandle],
    spec: &PdpSpec,
    mut progress: Option<&mut dyn FnMut(usize, usize)>,
) -> Result<PdpCurve> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput);
    }
    let j = check_eligible(dataset, &spec.feature)?;
    let xs = sweep_values(dataset, spec)?;
    let features = dataset.feature_names();
    let n = dataset.len() as f64;
    let total = xs.len() * models.len();
    let mut done = 0;

    let mut series = Vec::new();
    for model in models {
        let width = model.task().output_width();
        let current = model.predict_dataset(dataset)?;
        let reference: Vec<f64> = (0..width)
            .map(|c| current.iter().map(|o| o.class_score(c)).sum::<f64>() / n)
            .collect();
        let classes = plotted_classes(model.task(), &reference, spec.top_n);
        let mut ys: Vec<Vec<f64>> = vec![Vec::with_capacity(xs.len()); classes.len()];
        for x in &xs {
            let rows: Vec<Vec<Value>> = dataset.points().iter().map(|p| with_value(&p.values, j, x)).collect();
            let refs: Vec<&[Value]> = rows.iter().map(Vec::as_slice).collect();
            let outputs = model.predict_batch(&features, &refs)?;
            for (k, class) in classes.iter().enumerate() {
                ys[k].push(outputs.iter().map(|o| class_value(o, *class)).sum::<f64>() / n);
            }
            done += 1;
            if let Some(cb) = progress.as_mut() {
                cb(done, total);
            }
        }
        for (class, ys) in classes.into_iter().zip(ys) {
            series.push(finish_series(model.slot(), class, ys));
        }
    }

    Ok(PdpCurve {
        feature: spec.feature.clone(),
        global: true,
        point_id: None,
        xs,
        series,
        original_value: None,
        thresholds: thresholds_for(models, spec),
    })
}

fn finish_series(model: ModelSlot, class: Option<usize>, ys: Vec<f64>) -> PdpSeries {
    let mut s = PdpSeries {
        model,
        class,
        ys,
        flat: false,
    };
    s.flat = s.spread() < FLAT_TOLERANCE;
    s
}
