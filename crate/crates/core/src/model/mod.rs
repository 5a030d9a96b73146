//! Black-box prediction over builtin weight documents and remote HTTP
//! endpoints, for up to two models at a time.

mod builtin;
mod cache;
mod remote;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dataset::{DataPoint, Dataset, Value};
use crate::error::{Error, Result};

pub use builtin::{Activation, BuiltinModel, BuiltinModelSpec, Layer, OutputActivation, Standardization};
pub use cache::PredictionCache;
pub use remote::{RemoteModel, RemoteOptions};

/// Multiclass outputs must sum to one within this tolerance.
pub const SOFTMAX_TOLERANCE: f64 = 1e-6;
/// Deltas smaller than this in magnitude are reported as flat.
pub const FLAT_DELTA: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    BinaryClassification,
    MultiClassification { num_classes: usize },
    Regression,
}

impl TaskKind {
    pub fn output_width(self) -> usize {
        match self {
            TaskKind::BinaryClassification | TaskKind::Regression => 1,
            TaskKind::MultiClassification { num_classes } => num_classes,
        }
    }

    pub fn is_binary(self) -> bool {
        self == TaskKind::BinaryClassification
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSlot {
    Model1,
    Model2,
}

impl ModelSlot {
    pub const ALL: [ModelSlot; 2] = [ModelSlot::Model1, ModelSlot::Model2];

    fn index(self) -> usize {
        match self {
            ModelSlot::Model1 => 0,
            ModelSlot::Model2 => 1,
        }
    }
}

impl fmt::Display for ModelSlot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelSlot::Model1 => "model1",
            ModelSlot::Model2 => "model2",
        })
    }
}

impl FromStr for ModelSlot {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['_', '-'], "").as_str() {
            "1" | "model1" => Ok(ModelSlot::Model1),
            "2" | "model2" => Ok(ModelSlot::Model2),
            other => Err(Error::InvalidArgument(format!("unknown model slot {other:?}"))),
        }
    }
}

/// Scores for one datapoint.
#[derive(Debug, Clone, PartialEq)]
pub enum PredictionOutput {
    /// Positive-class score in [0, 1].
    Binary(f64),
    /// Per-class scores summing to one.
    Multiclass(Vec<f64>),
    Regression(f64),
}

impl PredictionOutput {
    /// Positive-class score for binary models, the prediction for regression,
    /// and the top class score for multiclass.
    pub fn score(&self) -> f64 {
        match self {
            PredictionOutput::Binary(s) | PredictionOutput::Regression(s) => *s,
            PredictionOutput::Multiclass(v) => v[self.argmax()],
        }
    }

    /// Score of `class`; for binary models class 1 is positive.
    pub fn class_score(&self, class: usize) -> f64 {
        match self {
            PredictionOutput::Binary(s) => {
                if class == 1 {
                    *s
                } else {
                    1.0 - s
                }
            }
            PredictionOutput::Multiclass(v) => v.get(class).copied().unwrap_or(0.0),
            PredictionOutput::Regression(s) => *s,
        }
    }

    /// Index of the highest class score, lowest index on ties.
    pub fn argmax(&self) -> usize {
        match self {
            PredictionOutput::Multiclass(v) => v
                .iter()
                .enumerate()
                .fold(0, |best, (i, s)| if *s > v[best] { i } else { best }),
            PredictionOutput::Binary(s) => usize::from(*s >= 0.5),
            PredictionOutput::Regression(_) => 0,
        }
    }

    pub fn task_matches(&self, task: TaskKind) -> bool {
        match (self, task) {
            (PredictionOutput::Binary(_), TaskKind::BinaryClassification) => true,
            (PredictionOutput::Regression(_), TaskKind::Regression) => true,
            (PredictionOutput::Multiclass(v), TaskKind::MultiClassification { num_classes }) => {
                v.len() == num_classes
            }
            _ => false,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            PredictionOutput::Binary(s) => s.is_finite() && (0.0..=1.0).contains(s),
            PredictionOutput::Regression(s) => s.is_finite(),
            PredictionOutput::Multiclass(v) => {
                v.iter().all(|s| s.is_finite() && (0.0..=1.0).contains(s))
                    && (v.iter().sum::<f64>() - 1.0).abs() <= SOFTMAX_TOLERANCE
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Protocol(format!("invalid prediction {self:?}")))
        }
    }
}

impl Serialize for PredictionOutput {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            PredictionOutput::Binary(s) | PredictionOutput::Regression(s) => serializer.serialize_f64(*s),
            PredictionOutput::Multiclass(v) => v.serialize(serializer),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Up,
    Down,
    Flat,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Delta {
    Scalar(f64),
    Vector(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreDelta {
    pub delta: Delta,
    pub direction: Direction,
}

/// Change from `before` to `after`. Multiclass direction follows the class
/// that scored highest before the change.
pub fn score_delta(before: &PredictionOutput, after: &PredictionOutput) -> Result<ScoreDelta> {
    let (delta, signed) = match (before, after) {
        (PredictionOutput::Binary(a), PredictionOutput::Binary(b))
        | (PredictionOutput::Regression(a), PredictionOutput::Regression(b)) => {
            (Delta::Scalar(b - a), b - a)
        }
        (PredictionOutput::Multiclass(a), PredictionOutput::Multiclass(b)) if a.len() == b.len() => {
            let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).collect();
            let lead = d[before.argmax()];
            (Delta::Vector(d), lead)
        }
        _ => {
            return Err(Error::TaskMismatch(
                "score delta between outputs of different tasks".into(),
            ))
        }
    };
    let direction = if signed.abs() < FLAT_DELTA {
        Direction::Flat
    } else if signed > 0.0 {
        Direction::Up
    } else {
        Direction::Down
    };
    Ok(ScoreDelta { delta, direction })
}

/// A prediction backend: maps rows laid out as `features` to outputs.
pub trait Predictor: Send + Sync {
    fn task(&self) -> TaskKind;

    fn predict(&self, features: &[String], rows: &[&[Value]]) -> Result<Vec<PredictionOutput>>;
}

/// Where a model's predictions come from.
#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSource {
    Builtin(BuiltinModelSpec),
    Remote { url: String, task: TaskKind },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendInfo {
    Builtin,
    Remote { url: String },
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelInfo {
    pub slot: ModelSlot,
    pub display_name: String,
    pub task: TaskKind,
    pub backend: BackendInfo,
}

pub struct ModelHandle {
    slot: ModelSlot,
    display_name: String,
    backend: Box<dyn Predictor>,
    info: BackendInfo,
    cache: PredictionCache,
}

impl fmt::Debug for ModelHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelHandle")
            .field("slot", &self.slot)
            .field("display_name", &self.display_name)
            .field("backend", &self.info)
            .finish()
    }
}

impl ModelHandle {
    pub fn from_source(
        slot: ModelSlot,
        source: ModelSource,
        display_name: Option<String>,
        options: &RemoteOptions,
    ) -> Result<Self> {
        match source {
            ModelSource::Builtin(spec) => {
                let model = BuiltinModel::new(spec)?;
                Ok(Self::with_backend(slot, display_name, Box::new(model), BackendInfo::Builtin))
            }
            ModelSource::Remote { url, task } => {
                let model = RemoteModel::new(&url, task, options.clone())?;
                Ok(Self::with_backend(slot, display_name, Box::new(model), BackendInfo::Remote { url }))
            }
        }
    }

    pub fn builtin(slot: ModelSlot, spec: BuiltinModelSpec) -> Result<Self> {
        Self::from_source(slot, ModelSource::Builtin(spec), None, &RemoteOptions::default())
    }

    pub fn with_backend(
        slot: ModelSlot,
        display_name: Option<String>,
        backend: Box<dyn Predictor>,
        info: BackendInfo,
    ) -> Self {
        ModelHandle {
            slot,
            display_name: display_name.unwrap_or_else(|| slot.to_string()),
            backend,
            info,
            cache: PredictionCache::default(),
        }
    }

    pub fn slot(&self) -> ModelSlot {
        self.slot
    }

    pub fn task(&self) -> TaskKind {
        self.backend.task()
    }

    pub fn display_name(&self) -> &str {
        &self.display_name
    }

    pub fn info(&self) -> ModelInfo {
        ModelInfo {
            slot: self.slot,
            display_name: self.display_name.clone(),
            task: self.task(),
            backend: self.info.clone(),
        }
    }

    pub fn cache(&self) -> &PredictionCache {
        &self.cache
    }

    /// Predicts `rows` (each laid out as `features`) in input order, serving
    /// repeated rows from the cache.
    pub fn predict_batch(&self, features: &[String], rows: &[&[Value]]) -> Result<Vec<PredictionOutput>> {
        if !self.cache.is_enabled() {
            return self.predict_uncached(features, rows);
        }
        let keys: Vec<u64> = rows.iter().map(|r| PredictionCache::key(features, r)).collect();
        let mut out: Vec<Option<PredictionOutput>> = keys.iter().map(|k| self.cache.get(*k)).collect();
        let misses: Vec<usize> = (0..rows.len()).filter(|&i| out[i].is_none()).collect();
        if !misses.is_empty() {
            let miss_rows: Vec<&[Value]> = misses.iter().map(|&i| rows[i]).collect();
            let fresh = self.predict_uncached(features, &miss_rows)?;
            for (&i, prediction) in misses.iter().zip(fresh) {
                self.cache.insert(keys[i], prediction.clone());
                out[i] = Some(prediction);
            }
        }
        Ok(out.into_iter().map(|p| p.expect("filled above")).collect())
    }

    fn predict_uncached(&self, features: &[String], rows: &[&[Value]]) -> Result<Vec<PredictionOutput>> {
        if rows.is_empty() {
            return Ok(Vec::new());
        }
        let outputs = self.backend.predict(features, rows)?;
        if outputs.len() != rows.len() {
            return Err(Error::Protocol(format!(
                "expected {} predictions, got {}",
                rows.len(),
                outputs.len()
            )));
        }
        let task = self.task();
        for o in &outputs {
            if !o.task_matches(task) {
                return Err(Error::Protocol(format!("prediction {o:?} does not match task {task:?}")));
            }
            o.validate()?;
        }
        Ok(outputs)
    }

    pub fn predict_points(&self, dataset: &Dataset, points: &[&DataPoint]) -> Result<Vec<PredictionOutput>> {
        let rows: Vec<&[Value]> = points.iter().map(|p| p.values.as_slice()).collect();
        self.predict_batch(&dataset.feature_names(), &rows)
    }

    /// Predictions for every point, in dataset order.
    pub fn predict_dataset(&self, dataset: &Dataset) -> Result<Vec<PredictionOutput>> {
        let rows: Vec<&[Value]> = dataset.points().iter().map(|p| p.values.as_slice()).collect();
        self.predict_batch(&dataset.feature_names(), &rows)
    }
}

/// The (at most two) models of a session. All share one task.
#[derive(Debug, Default, Clone)]
pub struct ModelRegistry {
    slots: [Option<Arc<ModelHandle>>; 2],
}

impl ModelRegistry {
    pub fn register(&mut self, handle: ModelHandle) -> Result<Arc<ModelHandle>> {
        let slot = handle.slot();
        if self.slots[slot.index()].is_some() {
            return Err(Error::SlotOccupied(slot));
        }
        if let Some(task) = self.task() {
            if task != handle.task() {
                return Err(Error::TaskMismatch(format!(
                    "registered models are {task:?}, new model is {:?}",
                    handle.task()
                )));
            }
        }
        let handle = Arc::new(handle);
        self.slots[slot.index()] = Some(handle.clone());
        Ok(handle)
    }

    pub fn remove(&mut self, slot: ModelSlot) -> Option<Arc<ModelHandle>> {
        self.slots[slot.index()].take()
    }

    pub fn get(&self, slot: ModelSlot) -> Result<&Arc<ModelHandle>> {
        self.slots[slot.index()].as_ref().ok_or(Error::NoModel(slot))
    }

    /// Registered models in slot order.
    pub fn models(&self) -> Vec<&ModelHandle> {
        self.slots.iter().flatten().map(|h| h.as_ref()).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.iter().all(Option::is_none)
    }

    /// True when two models are registered and every analysis compares them.
    pub fn is_comparison(&self) -> bool {
        self.slots.iter().all(Option::is_some)
    }

    pub fn task(&self) -> Option<TaskKind> {
        self.slots.iter().flatten().next().map(|h| h.task())
    }

    pub fn clear_caches(&self) {
        for h in self.slots.iter().flatten() {
            h.cache().clear();
        }
    }
}
