//! Tabular datasets: schema, datapoints, runtime-derived features and the
//! editing operations used for what-if exploration.

mod binning;
mod ingest;
mod stats;

use std::collections::BTreeMap;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::{Arc, OnceLock};

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};

pub(crate) use binning::bin_column;
pub use binning::{assign_bins, AxisBins, BinAssignment, BinningSpec, PointBins, MISSING_BIN};
pub use ingest::{ingest, DeclaredFeature, Format};
pub use stats::{
    compute_feature_statistics, non_uniformity, sort_features, CategoricalSummary, DisplayMode,
    FeatureStatistics, HistogramBin, NumericSummary, SortKey, CDF_POINTS, HISTOGRAM_BINS,
    HISTOGRAM_DISTINCT_LIMIT,
};

/// A single cell.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Value {
    Number(f64),
    Text(String),
    #[default]
    Missing,
}

impl Value {
    pub fn is_missing(&self) -> bool {
        matches!(self, Value::Missing)
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            Value::Number(x) => Some(*x),
            _ => None,
        }
    }

    /// Canonical text form, used for categorical comparisons and labels.
    /// Integral numbers print without a fractional part.
    pub fn label(&self) -> String {
        match self {
            Value::Number(x) => format_number(*x),
            Value::Text(s) => s.clone(),
            Value::Missing => MISSING_BIN.to_string(),
        }
    }

    pub(crate) fn hash_into<H: Hasher>(&self, state: &mut H) {
        match self {
            Value::Number(x) => {
                0u8.hash(state);
                x.to_bits().hash(state);
            }
            Value::Text(s) => {
                1u8.hash(state);
                s.hash(state);
            }
            Value::Missing => 2u8.hash(state),
        }
    }
}

pub(crate) fn format_number(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl From<f64> for Value {
    fn from(x: f64) -> Self {
        Value::Number(x)
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Text(s.to_string())
    }
}

impl Serialize for Value {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Value::Number(x) => serializer.serialize_f64(*x),
            Value::Text(s) => serializer.serialize_str(s),
            Value::Missing => serializer.serialize_none(),
        }
    }
}

impl<'de> Deserialize<'de> for Value {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct ValueVisitor;

        impl<'de> Visitor<'de> for ValueVisitor {
            type Value = Value;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a number, string, boolean or null")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Value, E> {
                Ok(Value::Number(v))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Value, E> {
                Ok(Value::Number(v as f64))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Value, E> {
                Ok(Value::Number(v as f64))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Value, E> {
                Ok(Value::Text(v.to_string()))
            }

            fn visit_string<E: de::Error>(self, v: String) -> Result<Value, E> {
                Ok(Value::Text(v))
            }

            fn visit_bool<E: de::Error>(self, v: bool) -> Result<Value, E> {
                Ok(Value::Text(v.to_string()))
            }

            fn visit_unit<E: de::Error>(self) -> Result<Value, E> {
                Ok(Value::Missing)
            }

            fn visit_none<E: de::Error>(self) -> Result<Value, E> {
                Ok(Value::Missing)
            }

            fn visit_some<D: Deserializer<'de>>(self, d: D) -> Result<Value, D::Error> {
                d.deserialize_any(ValueVisitor)
            }
        }

        deserializer.deserialize_any(ValueVisitor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Numeric,
    Categorical,
}

impl FeatureKind {
    fn expected(self) -> &'static str {
        match self {
            FeatureKind::Numeric => "numeric",
            FeatureKind::Categorical => "categorical",
        }
    }
}

/// Name and kind of one input column. Kind is fixed at ingestion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feature {
    pub name: String,
    pub kind: FeatureKind,
}

/// A feature together with counts over the current points.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureSchema {
    pub name: String,
    pub kind: FeatureKind,
    pub distinct_count: usize,
    pub missing_count: usize,
    /// Always 0 for categorical features.
    pub zero_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Origin {
    Loaded,
    Duplicated { from: u64 },
    Edited,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DataPoint {
    pub id: u64,
    /// One value per schema feature, in schema order.
    pub values: Vec<Value>,
    pub origin: Origin,
}

/// Numeric values computed at runtime (e.g. distance to a selected point).
/// Never fed to models and excluded from distance and partial dependence.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DerivedFeature {
    pub name: String,
    pub values: BTreeMap<u64, f64>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    features: Vec<Feature>,
    // Ids are strictly increasing along this vector: new ids are appended and
    // deletion preserves order, so lookups binary-search.
    points: Vec<DataPoint>,
    derived: Vec<DerivedFeature>,
    next_id: u64,
    version: u64,
    stats: OnceLock<Arc<Vec<FeatureStatistics>>>,
}

/// Values of one column, resolved from the schema, derived features or
/// caller-supplied model fields.
#[derive(Debug, Clone)]
pub struct Column {
    pub name: String,
    pub kind: FeatureKind,
    pub values: Vec<Value>,
}

impl Dataset {
    /// Builds a dataset from rows already laid out in schema order. Ids are
    /// assigned 0..n-1.
    pub fn from_rows(features: Vec<Feature>, rows: Vec<Vec<Value>>) -> Result<Self> {
        for (i, f) in features.iter().enumerate() {
            if features[..i].iter().any(|g| g.name == f.name) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate feature name {:?}",
                    f.name
                )));
            }
        }
        let mut points = Vec::with_capacity(rows.len());
        for (row, values) in rows.into_iter().enumerate() {
            if values.len() != features.len() {
                return Err(Error::Arity {
                    row,
                    expected: features.len(),
                    found: values.len(),
                });
            }
            for (f, v) in features.iter().zip(&values) {
                check_type(f, v).map_err(|_| Error::Malformed {
                    row,
                    column: f.name.clone(),
                    message: format!("expected a {} value", f.kind.expected()),
                })?;
            }
            points.push(DataPoint {
                id: row as u64,
                values,
                origin: Origin::Loaded,
            });
        }
        let next_id = points.len() as u64;
        Ok(Dataset {
            features,
            points,
            derived: Vec::new(),
            next_id,
            version: 0,
            stats: OnceLock::new(),
        })
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    pub fn feature_index(&self, name: &str) -> Result<usize> {
        self.features
            .iter()
            .position(|f| f.name == name)
            .ok_or_else(|| Error::UnknownFeature(name.to_string()))
    }

    pub fn points(&self) -> &[DataPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn derived_features(&self) -> &[DerivedFeature] {
        &self.derived
    }

    /// Snapshot version; every mutation advances it by one.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn position(&self, id: u64) -> Result<usize> {
        self.points
            .binary_search_by_key(&id, |p| p.id)
            .map_err(|_| Error::UnknownPoint(id))
    }

    pub fn point(&self, id: u64) -> Result<&DataPoint> {
        self.position(id).map(|i| &self.points[i])
    }

    pub fn schema(&self) -> Vec<FeatureSchema> {
        self.features
            .iter()
            .enumerate()
            .map(|(j, f)| {
                let mut missing = 0;
                let mut zeros = 0;
                let mut distinct = std::collections::HashSet::new();
                for p in &self.points {
                    match &p.values[j] {
                        Value::Missing => missing += 1,
                        Value::Number(x) => {
                            if *x == 0.0 {
                                zeros += 1;
                            }
                            // + 0.0 folds -0.0 into 0.0
                            distinct.insert(DistinctKey::Number((*x + 0.0).to_bits()));
                        }
                        Value::Text(s) => {
                            distinct.insert(DistinctKey::Text(s.as_str()));
                        }
                    }
                }
                FeatureSchema {
                    name: f.name.clone(),
                    kind: f.kind,
                    distinct_count: distinct.len(),
                    missing_count: missing,
                    zero_count: zeros,
                }
            })
            .collect()
    }

    /// Feature statistics for the current snapshot, computed on first use
    /// after each mutation.
    pub fn statistics(&self) -> Arc<Vec<FeatureStatistics>> {
        self.stats
            .get_or_init(|| Arc::new(compute_feature_statistics(self)))
            .clone()
    }

    /// Resolves a schema or derived feature by name.
    pub fn column(&self, name: &str) -> Result<Column> {
        if let Ok(j) = self.feature_index(name) {
            return Ok(Column {
                name: name.to_string(),
                kind: self.features[j].kind,
                values: self.points.iter().map(|p| p.values[j].clone()).collect(),
            });
        }
        if let Some(d) = self.derived.iter().find(|d| d.name == name) {
            return Ok(Column {
                name: name.to_string(),
                kind: FeatureKind::Numeric,
                values: self
                    .points
                    .iter()
                    .map(|p| d.values.get(&p.id).copied().map_or(Value::Missing, Value::Number))
                    .collect(),
            });
        }
        Err(Error::UnknownFeature(name.to_string()))
    }

    fn touch(&mut self) {
        self.version += 1;
        self.stats = OnceLock::new();
    }

    /// Replaces feature values on one point and marks it edited.
    pub fn edit_datapoint(&mut self, id: u64, changes: &[(String, Value)]) -> Result<&DataPoint> {
        let pos = self.position(id)?;
        let mut resolved = Vec::with_capacity(changes.len());
        for (name, value) in changes {
            let j = self.feature_index(name)?;
            check_type(&self.features[j], value)?;
            resolved.push((j, value.clone()));
        }
        let point = &mut self.points[pos];
        for (j, value) in resolved {
            point.values[j] = value;
        }
        point.origin = Origin::Edited;
        self.touch();
        Ok(&self.points[pos])
    }

    pub fn duplicate_datapoint(&mut self, id: u64) -> Result<&DataPoint> {
        let pos = self.position(id)?;
        let copy = DataPoint {
            id: self.next_id,
            values: self.points[pos].values.clone(),
            origin: Origin::Duplicated { from: id },
        };
        self.next_id += 1;
        self.points.push(copy);
        self.touch();
        Ok(self.points.last().expect("just pushed"))
    }

    pub fn delete_datapoint(&mut self, id: u64) -> Result<()> {
        let pos = self.position(id)?;
        self.points.remove(pos);
        for d in &mut self.derived {
            d.values.remove(&id);
        }
        self.touch();
        Ok(())
    }

    /// Adds a read-only numeric feature. A name already in use gets a
    /// `_v2`, `_v3`, ... suffix; the name actually used is returned.
    pub fn add_derived_feature(&mut self, name: &str, values: BTreeMap<u64, f64>) -> String {
        let taken = |n: &str| {
            self.features.iter().any(|f| f.name == n) || self.derived.iter().any(|d| d.name == n)
        };
        let mut chosen = name.to_string();
        let mut suffix = 2;
        while taken(&chosen) {
            chosen = format!("{name}_v{suffix}");
            suffix += 1;
        }
        self.derived.push(DerivedFeature {
            name: chosen.clone(),
            values,
        });
        self.touch();
        chosen
    }
}

#[derive(PartialEq, Eq, Hash)]
pub(crate) enum DistinctKey<'a> {
    Number(u64),
    Text(&'a str),
}

impl<'a> DistinctKey<'a> {
    pub(crate) fn of(value: &'a Value) -> Option<Self> {
        match value {
            Value::Number(x) => Some(DistinctKey::Number((*x + 0.0).to_bits())),
            Value::Text(s) => Some(DistinctKey::Text(s)),
            Value::Missing => None,
        }
    }
}

fn check_type(feature: &Feature, value: &Value) -> Result<()> {
    let ok = match (feature.kind, value) {
        (_, Value::Missing) => true,
        (FeatureKind::Numeric, Value::Number(x)) => x.is_finite(),
        (FeatureKind::Categorical, Value::Text(_)) => true,
        _ => false,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::TypeMismatch {
            feature: feature.name.clone(),
            expected: feature.kind.expected(),
        })
    }
}
