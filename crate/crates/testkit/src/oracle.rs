use std::collections::HashMap;

use whatif_core::dataset::{FeatureKind, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Counts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Point-by-point counting with an arbitrary positive predicate.
pub fn count_by(scores: &[f64], labels: &[bool], positive: impl Fn(f64) -> bool) -> Counts {
    let mut c = Counts::default();
    for i in 0..scores.len() {
        let predicted = positive(scores[i]);
        if predicted && labels[i] {
            c.tp += 1;
        } else if predicted {
            c.fp += 1;
        } else if labels[i] {
            c.fn_ += 1;
        } else {
            c.tn += 1;
        }
    }
    c
}

pub fn count_at(scores: &[f64], labels: &[bool], threshold: f64) -> Counts {
    count_by(scores, labels, |s| s >= threshold)
}

/// Every distinct classification of the points by a threshold: "at least
/// s" for each observed score s, plus "nothing positive".
pub fn all_classifications(scores: &[f64], labels: &[bool]) -> Vec<Counts> {
    let mut out: Vec<Counts> = scores.iter().map(|&s| count_at(scores, labels, s)).collect();
    out.push(count_by(scores, labels, |_| false));
    out.push(count_by(scores, labels, |_| true));
    out
}

pub fn best_accuracy(scores: &[f64], labels: &[bool]) -> f64 {
    all_classifications(scores, labels)
        .iter()
        .map(|c| (c.tp + c.tn) as f64 / c.total() as f64)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Probability that a random positive outscores a random negative, ties
/// counting half.
pub fn mann_whitney_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] && !labels[j] {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    PositiveRate,
    TruePositiveRate,
    Accuracy,
}

pub fn quantity(q: Quantity, c: &Counts) -> f64 {
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    match q {
        Quantity::PositiveRate => ratio(c.tp + c.fp, c.total()),
        Quantity::TruePositiveRate => ratio(c.tp, c.tp + c.fn_),
        Quantity::Accuracy => ratio(c.tp + c.tn, c.total()),
    }
}

/// Smallest `|q_a - q_b|` over every pair of per-slice classifications.
pub fn product_space_disparity(
    a: (&[f64], &[bool]),
    b: (&[f64], &[bool]),
    q: Quantity,
) -> f64 {
    let qa: Vec<f64> = all_classifications(a.0, a.1).iter().map(|c| quantity(q, c)).collect();
    let qb: Vec<f64> = all_classifications(b.0, b.1).iter().map(|c| quantity(q, c)).collect();
    let mut best = f64::INFINITY;
    for x in &qa {
        for y in &qb {
            best = best.min((x - y).abs());
        }
    }
    best
}

/// Per-feature normalizers computed directly from the column values.
pub struct Scales {
    kinds: Vec<FeatureKind>,
    std: Vec<f64>,
    collision: Vec<f64>,
}

impl Scales {
    pub fn from_rows(kinds: &[FeatureKind], rows: &[Vec<Value>]) -> Self {
        let mut std = vec![0.0; kinds.len()];
        let mut collision = vec![0.0; kinds.len()];
        for (j, kind) in kinds.iter().enumerate() {
            match kind {
                FeatureKind::Numeric => {
                    let xs: Vec<f64> = rows
                        .iter()
                        .filter_map(|r| match r[j] {
                            Value::Number(x) => Some(x),
                            _ => None,
                        })
                        .collect();
                    if !xs.is_empty() {
                        let n = xs.len() as f64;
                        let mean = xs.iter().sum::<f64>() / n;
                        std[j] = (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
                    }
                }
                FeatureKind::Categorical => {
                    let mut counts: HashMap<String, usize> = HashMap::new();
                    let mut total = 0;
                    for r in rows {
                        if let Value::Text(t) = &r[j] {
                            *counts.entry(t.clone()).or_default() += 1;
                            total += 1;
                        }
                    }
                    let mut values: Vec<(&String, &usize)> = counts.iter().collect();
                    values.sort();
                    collision[j] = if total == 0 {
                        1.0
                    } else {
                        values.iter().map(|(_, &c)| (c as f64 / total as f64).powi(2)).sum()
                    };
                }
            }
        }
        Scales { kinds: kinds.to_vec(), std, collision }
    }

    fn term(&self, j: usize, a: &Value, b: &Value) -> f64 {
        let one_missing = a.is_missing() != b.is_missing();
        match self.kinds[j] {
            FeatureKind::Numeric => {
                if one_missing {
                    1.0
                } else {
                    match (a, b) {
                        (Value::Number(x), Value::Number(y)) if self.std[j] > 0.0 => (x - y).abs() / self.std[j],
                        _ => 0.0,
                    }
                }
            }
            FeatureKind::Categorical => {
                if one_missing || (a != b) {
                    self.collision[j]
                } else {
                    0.0
                }
            }
        }
    }

    pub fn l1(&self, a: &[Value], b: &[Value]) -> f64 {
        (0..self.kinds.len()).map(|j| self.term(j, &a[j], &b[j])).sum()
    }

    pub fn l2(&self, a: &[Value], b: &[Value]) -> f64 {
        (0..self.kinds.len())
            .map(|j| self.term(j, &a[j], &b[j]).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Index of the closest row (lowest index on ties) among rows whose outcome
/// differs from the anchor's.
pub fn brute_nearest(
    scales: &Scales,
    rows: &[Vec<Value>],
    outcomes: &[i64],
    anchor: usize,
    l2: bool,
) -> Option<(usize, f64)> {
    let mut candidates: Vec<(f64, usize)> = (0..rows.len())
        .filter(|&i| i != anchor && outcomes[i] != outcomes[anchor])
        .map(|i| {
            let d = if l2 {
                scales.l2(&rows[anchor], &rows[i])
            } else {
                scales.l1(&rows[anchor], &rows[i])
            };
            (d, i)
        })
        .collect();
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    candidates.first().map(|&(d, i)| (i, d))
}
