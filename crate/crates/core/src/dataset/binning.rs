use serde::{Deserialize, Serialize};

use super::{format_number, Column, Dataset, FeatureKind, Value};
use crate::error::{Error, Result};

/// Label of the bin holding missing values.
pub const MISSING_BIN: &str = "(missing)";

fn default_bins() -> usize {
    10
}

/// Facet layout: which features position points along x and y, and which
/// one colors them. Any of them may also name a caller-supplied model field
/// (predicted class, correctness, error, score).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinningSpec {
    #[serde(default)]
    pub x_feature: Option<String>,
    #[serde(default)]
    pub y_feature: Option<String>,
    #[serde(default = "default_bins")]
    pub numeric_bin_count: usize,
    #[serde(default)]
    pub color_feature: Option<String>,
}

impl Default for BinningSpec {
    fn default() -> Self {
        BinningSpec {
            x_feature: None,
            y_feature: None,
            numeric_bin_count: default_bins(),
            color_feature: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AxisBins {
    pub feature: String,
    pub kind: FeatureKind,
    /// Bin labels in index order; a trailing `(missing)` bin appears only if
    /// some point lacks a value.
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointBins {
    pub id: u64,
    pub x: Option<usize>,
    pub y: Option<usize>,
    pub color: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinAssignment {
    pub x: Option<AxisBins>,
    pub y: Option<AxisBins>,
    pub color: Option<AxisBins>,
    pub points: Vec<PointBins>,
}

/// Assigns every point to x/y/color bins. Numeric features use
/// `numeric_bin_count` equal-width bins over the observed `[min, max]`;
/// the first bin is closed and later bins are `(low, high]`, so the maximum
/// falls in the last bin. Categorical bins are the distinct values in
/// lexicographic order.
pub fn assign_bins(
    dataset: &Dataset,
    spec: &BinningSpec,
    model_fields: Option<&[Column]>,
) -> Result<BinAssignment> {
    if spec.numeric_bin_count == 0 {
        return Err(Error::InvalidArgument("numeric_bin_count must be at least 1".into()));
    }
    if let (Some(x), Some(y)) = (&spec.x_feature, &spec.y_feature) {
        if x == y {
            return Err(Error::InvalidArgument(format!(
                "x and y must be distinct features, both are {x:?}"
            )));
        }
    }

    let resolve = |name: &Option<String>| -> Result<Option<(AxisBins, Vec<usize>)>> {
        let Some(name) = name else { return Ok(None) };
        let column = match dataset.column(name) {
            Ok(c) => c,
            Err(Error::UnknownFeature(_)) => model_fields
                .and_then(|fields| fields.iter().find(|c| &c.name == name))
                .cloned()
                .ok_or_else(|| Error::UnknownFeature(name.clone()))?,
            Err(e) => return Err(e),
        };
        if column.values.len() != dataset.len() {
            return Err(Error::InvalidArgument(format!(
                "field {name:?} has {} values for {} points",
                column.values.len(),
                dataset.len()
            )));
        }
        Ok(Some(bin_column(&column, spec.numeric_bin_count)))
    };

    let x = resolve(&spec.x_feature)?;
    let y = resolve(&spec.y_feature)?;
    let color = resolve(&spec.color_feature)?;

    let points = dataset
        .points()
        .iter()
        .enumerate()
        .map(|(i, p)| PointBins {
            id: p.id,
            x: x.as_ref().map(|(_, idx)| idx[i]),
            y: y.as_ref().map(|(_, idx)| idx[i]),
            color: color.as_ref().map(|(_, idx)| idx[i]),
        })
        .collect();

    Ok(BinAssignment {
        x: x.map(|(axis, _)| axis),
        y: y.map(|(axis, _)| axis),
        color: color.map(|(axis, _)| axis),
        points,
    })
}

/// Bins a single column, returning the axis description and per-value bin
/// indices.
pub(crate) fn bin_column(column: &Column, bin_count: usize) -> (AxisBins, Vec<usize>) {
    // Model fields arrive as raw values; any text makes the column categorical.
    let numeric = column.kind == FeatureKind::Numeric
        && column.values.iter().all(|v| !matches!(v, Value::Text(_)));
    let has_missing = column.values.iter().any(Value::is_missing);

    let (mut labels, indices): (Vec<String>, Vec<usize>) = if numeric {
        let xs = column.values.iter().filter_map(Value::as_number);
        let (min, max) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
            (lo.min(x), hi.max(x))
        });
        let width = if min.is_finite() { (max - min) / bin_count as f64 } else { 0.0 };
        let labels = (0..bin_count)
            .map(|i| {
                let low = if min.is_finite() { min + width * i as f64 } else { 0.0 };
                let high = if i + 1 == bin_count { max.max(low) } else { min + width * (i + 1) as f64 };
                let open = if i == 0 { '[' } else { '(' };
                format!("{open}{}, {}]", format_number(low), format_number(high))
            })
            .collect();
        let indices = column
            .values
            .iter()
            .map(|v| match v {
                Value::Number(x) => numeric_bin(*x, min, width, bin_count),
                _ => bin_count,
            })
            .collect();
        (labels, indices)
    } else {
        let mut categories: Vec<String> = column
            .values
            .iter()
            .filter(|v| !v.is_missing())
            .map(Value::label)
            .collect();
        categories.sort();
        categories.dedup();
        let indices = column
            .values
            .iter()
            .map(|v| {
                if v.is_missing() {
                    categories.len()
                } else {
                    categories.binary_search(&v.label()).expect("category collected above")
                }
            })
            .collect();
        (categories, indices)
    };
    if has_missing {
        labels.push(MISSING_BIN.to_string());
    }
    (
        AxisBins {
            feature: column.name.clone(),
            kind: if numeric { FeatureKind::Numeric } else { FeatureKind::Categorical },
            labels,
        },
        indices,
    )
}

fn numeric_bin(x: f64, min: f64, width: f64, bin_count: usize) -> usize {
    if width <= 0.0 {
        return 0;
    }
    let upper = ((x - min) / width).ceil();
    let mut b = if upper <= 1.0 { 0 } else { ((upper as usize) - 1).min(bin_count - 1) };
    // settle rounding at the edges against the labelled bounds
    while b > 0 && x <= min + width * b as f64 {
        b -= 1;
    }
    while b + 1 < bin_count && x > min + width * (b + 1) as f64 {
        b += 1;
    }
    b
}
