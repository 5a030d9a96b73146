use std::collections::{BTreeMap, HashSet};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Dataset, DistinctKey, FeatureKind, Value};
use crate::error::Error;

pub const HISTOGRAM_BINS: usize = 10;
/// Features with at most this many distinct values render as histograms.
pub const HISTOGRAM_DISTINCT_LIMIT: usize = 20;
/// Number of sample points kept for a numeric CDF line.
pub const CDF_POINTS: usize = 101;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisplayMode {
    Histogram,
    CdfLine,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramBin {
    pub low: f64,
    pub high: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NumericSummary {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub histogram: Vec<HistogramBin>,
    /// (value, cumulative fraction) samples, present in CDF display mode.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cdf: Option<Vec<(f64, f64)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoricalSummary {
    pub value_counts: BTreeMap<String, usize>,
    /// Ties go to the lexicographically smallest value.
    pub most_frequent: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureStatistics {
    pub name: String,
    pub kind: FeatureKind,
    pub count: usize,
    pub missing_count: usize,
    pub distinct_count: usize,
    pub zero_count: usize,
    pub numeric: Option<NumericSummary>,
    pub categorical: Option<CategoricalSummary>,
    pub non_uniformity: f64,
    pub display_mode: DisplayMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SortKey {
    NonUniformity,
    MissingOrZeroCount,
    Alphabetical,
}

impl FromStr for SortKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "non-uniformity" | "nonuniformity" => Ok(SortKey::NonUniformity),
            "missing" | "missing-or-zero" | "missing-or-zero-count" | "zeros" => {
                Ok(SortKey::MissingOrZeroCount)
            }
            "alpha" | "alphabetical" | "name" => Ok(SortKey::Alphabetical),
            other => Err(Error::InvalidArgument(format!("unknown sort key {other:?}"))),
        }
    }
}

/// `1 - H(p) / ln(k)` over the `k` non-empty buckets; 1 when `k <= 1` and
/// exactly 0 when all non-empty buckets hold the same count.
pub fn non_uniformity(counts: &[usize]) -> f64 {
    let nonempty: Vec<f64> = counts.iter().filter(|&&c| c > 0).map(|&c| c as f64).collect();
    let k = nonempty.len();
    if k <= 1 {
        return 1.0;
    }
    if nonempty.iter().all(|&c| c == nonempty[0]) {
        return 0.0;
    }
    let total: f64 = nonempty.iter().sum();
    let entropy: f64 = nonempty
        .iter()
        .map(|&c| {
            let p = c / total;
            -p * p.ln()
        })
        .sum();
    (1.0 - entropy / (k as f64).ln()).clamp(0.0, 1.0)
}

pub fn compute_feature_statistics(dataset: &Dataset) -> Vec<FeatureStatistics> {
    dataset
        .features()
        .iter()
        .enumerate()
        .map(|(j, feature)| {
            let values: Vec<&Value> = dataset.points().iter().map(|p| &p.values[j]).collect();
            let missing_count = values.iter().filter(|v| v.is_missing()).count();
            let distinct_count = values
                .iter()
                .filter_map(|v| DistinctKey::of(v))
                .collect::<HashSet<_>>()
                .len();
            let display_mode = if distinct_count <= HISTOGRAM_DISTINCT_LIMIT {
                DisplayMode::Histogram
            } else {
                DisplayMode::CdfLine
            };
            let mut stats = FeatureStatistics {
                name: feature.name.clone(),
                kind: feature.kind,
                count: values.len(),
                missing_count,
                distinct_count,
                zero_count: 0,
                numeric: None,
                categorical: None,
                non_uniformity: 1.0,
                display_mode,
            };
            match feature.kind {
                FeatureKind::Numeric => {
                    let xs: Vec<f64> = values.iter().filter_map(|v| v.as_number()).collect();
                    stats.zero_count = xs.iter().filter(|&&x| x == 0.0).count();
                    if let Some(summary) = numeric_summary(&xs, display_mode) {
                        let counts: Vec<usize> = summary.histogram.iter().map(|b| b.count).collect();
                        stats.non_uniformity = non_uniformity(&counts);
                        stats.numeric = Some(summary);
                    }
                }
                FeatureKind::Categorical => {
                    let mut value_counts = BTreeMap::new();
                    for v in &values {
                        if let Value::Text(s) = v {
                            *value_counts.entry(s.clone()).or_insert(0usize) += 1;
                        }
                    }
                    let counts: Vec<usize> = value_counts.values().copied().collect();
                    stats.non_uniformity = non_uniformity(&counts);
                    // BTreeMap iterates in ascending order, so `>` keeps the first of equals.
                    let most_frequent = value_counts
                        .iter()
                        .fold(None::<(&String, usize)>, |best, (v, &c)| match best {
                            Some((_, bc)) if bc >= c => best,
                            _ => Some((v, c)),
                        })
                        .map(|(v, _)| v.clone());
                    stats.categorical = Some(CategoricalSummary {
                        value_counts,
                        most_frequent,
                    });
                }
            }
            stats
        })
        .collect()
}

fn numeric_summary(xs: &[f64], mode: DisplayMode) -> Option<NumericSummary> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = (xs.iter().sum::<f64>() / n).clamp(min, max);
    let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();

    let width = (max - min) / HISTOGRAM_BINS as f64;
    let mut histogram: Vec<HistogramBin> = (0..HISTOGRAM_BINS)
        .map(|i| HistogramBin {
            low: min + width * i as f64,
            high: if i + 1 == HISTOGRAM_BINS { max } else { min + width * (i + 1) as f64 },
            count: 0,
        })
        .collect();
    for &x in xs {
        // half-open [low, high); the maximum lands in the last bin
        let i = if width > 0.0 {
            (((x - min) / width).floor() as usize).min(HISTOGRAM_BINS - 1)
        } else {
            0
        };
        histogram[i].count += 1;
    }

    let cdf = (mode == DisplayMode::CdfLine).then(|| {
        let mut sorted = xs.to_vec();
        sorted.sort_by(f64::total_cmp);
        let m = sorted.len();
        let mut points: Vec<(f64, f64)> = Vec::with_capacity(CDF_POINTS);
        for k in 0..CDF_POINTS {
            let rank = ((k * (m - 1)) as f64 / (CDF_POINTS - 1) as f64).round() as usize;
            // last index holding this value, so the fraction counts all ties
            let value = sorted[rank];
            let upper = sorted.partition_point(|&x| x <= value);
            let point = (value, upper as f64 / m as f64);
            if points.last() != Some(&point) {
                points.push(point);
            }
        }
        points
    });

    Some(NumericSummary {
        min,
        max,
        mean,
        std,
        histogram,
        cdf,
    })
}

/// Orders feature names. Numeric keys sort descending, names ascending; ties
/// keep schema order.
pub fn sort_features(stats: &[FeatureStatistics], key: SortKey) -> Vec<String> {
    let mut order: Vec<&FeatureStatistics> = stats.iter().collect();
    match key {
        SortKey::NonUniformity => {
            order.sort_by(|a, b| b.non_uniformity.total_cmp(&a.non_uniformity))
        }
        SortKey::MissingOrZeroCount => order.sort_by(|a, b| {
            (b.missing_count + b.zero_count).cmp(&(a.missing_count + a.zero_count))
        }),
        SortKey::Alphabetical => order.sort_by(|a, b| a.name.cmp(&b.name)),
    }
    order.into_iter().map(|s| s.name.clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Feature, Format};

    fn numeric(values: &[Option<f64>]) -> Dataset {
        Dataset::from_rows(
            vec![Feature {
                name: "x".into(),
                kind: FeatureKind::Numeric,
            }],
            values
                .iter()
                .map(|v| vec![v.map_or(Value::Missing, Value::Number)])
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn mostly_zero_feature() {
        let mut xs = vec![Some(0.0); 9];
        xs.push(Some(100.0));
        let stats = &compute_feature_statistics(&numeric(&xs))[0];
        assert_eq!(stats.zero_count, 9);
        let summary = stats.numeric.as_ref().unwrap();
        assert_eq!(summary.histogram[0].count, 9);
        assert_eq!(summary.histogram[9].count, 1);
        assert_eq!(summary.mean, 10.0);
        assert_eq!(summary.std, 30.0);
        // 1 - H(0.9, 0.1) / ln 2
        let h = -(0.9f64 * 0.9f64.ln() + 0.1 * 0.1f64.ln());
        assert!((stats.non_uniformity - (1.0 - h / 2f64.ln())).abs() < 1e-12);
        assert!(stats.non_uniformity > 0.5);
    }

    #[test]
    fn uniform_categorical_is_zero() {
        let ds = crate::dataset::ingest(b"c\na\nb\nc\nd\n", Format::Csv, None).unwrap();
        let stats = &compute_feature_statistics(&ds)[0];
        assert_eq!(stats.non_uniformity, 0.0);
        assert_eq!(stats.categorical.as_ref().unwrap().most_frequent.as_deref(), Some("a"));
    }

    #[test]
    fn single_valued_is_one() {
        let stats = &compute_feature_statistics(&numeric(&[Some(3.0); 4]))[0];
        assert_eq!(stats.non_uniformity, 1.0);
        assert_eq!(stats.numeric.as_ref().unwrap().std, 0.0);
        assert_eq!(stats.numeric.as_ref().unwrap().histogram[0].count, 4);
    }

    #[test]
    fn display_mode_threshold() {
        let xs: Vec<Option<f64>> = (1..=20).map(|i| Some(i as f64)).collect();
        assert_eq!(compute_feature_statistics(&numeric(&xs))[0].display_mode, DisplayMode::Histogram);
        let xs: Vec<Option<f64>> = (1..=25).map(|i| Some(i as f64)).collect();
        let stats = &compute_feature_statistics(&numeric(&xs))[0];
        assert_eq!(stats.display_mode, DisplayMode::CdfLine);
        let cdf = stats.numeric.as_ref().unwrap().cdf.as_ref().unwrap();
        assert_eq!(cdf.first(), Some(&(1.0, 1.0 / 25.0)));
        assert_eq!(cdf.last(), Some(&(25.0, 1.0)));
    }

    #[test]
    fn missing_excluded_from_aggregates() {
        let stats = &compute_feature_statistics(&numeric(&[Some(1.0), None, Some(3.0)]))[0];
        assert_eq!(stats.missing_count, 1);
        let summary = stats.numeric.as_ref().unwrap();
        assert_eq!((summary.min, summary.max, summary.mean, summary.std), (1.0, 3.0, 2.0, 1.0));
        assert_eq!(summary.histogram.iter().map(|b| b.count).sum::<usize>(), 2);
    }

    #[test]
    fn all_missing_column() {
        let stats = &compute_feature_statistics(&numeric(&[None, None]))[0];
        assert!(stats.numeric.is_none());
        assert_eq!(stats.missing_count, 2);
    }

    fn named(name: &str, nu: f64, missing: usize, zeros: usize) -> FeatureStatistics {
        FeatureStatistics {
            name: name.into(),
            kind: FeatureKind::Numeric,
            count: 10,
            missing_count: missing,
            distinct_count: 3,
            zero_count: zeros,
            numeric: None,
            categorical: None,
            non_uniformity: nu,
            display_mode: DisplayMode::Histogram,
        }
    }

    #[test]
    fn sorting() {
        let stats = vec![named("b", 0.1, 2, 0), named("a", 0.9, 0, 9)];
        assert_eq!(sort_features(&stats, SortKey::NonUniformity), vec!["a", "b"]);
        assert_eq!(sort_features(&stats, SortKey::MissingOrZeroCount), vec!["a", "b"]);
        assert_eq!(sort_features(&stats, SortKey::Alphabetical), vec!["a", "b"]);

        let tied = vec![named("z", 0.5, 0, 0), named("m", 0.5, 0, 0), named("q", 0.5, 0, 0)];
        assert_eq!(sort_features(&tied, SortKey::NonUniformity), vec!["z", "m", "q"]);
        assert_eq!(sort_features(&tied, SortKey::MissingOrZeroCount), vec!["z", "m", "q"]);
    }

    #[test]
    fn sort_key_parsing() {
        assert_eq!("non-uniformity".parse::<SortKey>().unwrap(), SortKey::NonUniformity);
        assert_eq!("missing".parse::<SortKey>().unwrap(), SortKey::MissingOrZeroCount);
        assert_eq!("alpha".parse::<SortKey>().unwrap(), SortKey::Alphabetical);
        assert!("size".parse::<SortKey>().is_err());
    }
}
