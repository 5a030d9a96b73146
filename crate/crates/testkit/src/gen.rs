use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

use whatif_core::dataset::{Dataset, Feature, FeatureKind, Value};
use whatif_core::performance::SliceScores;

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

/// Scores in [0, 1] with plenty of ties and labels loosely correlated with
/// the score. Both classes are always present when `n >= 2`.
pub fn scores_labels(rng: &mut StdRng, n: usize) -> (Vec<f64>, Vec<bool>) {
    let resolution = *[0.0, 0.01, 0.05, 0.1].choose(rng).unwrap();
    let mut scores = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let mut s: f64 = rng.gen();
        if resolution > 0.0 {
            s = ((s / resolution).round() * resolution).clamp(0.0, 1.0);
        }
        let noise: f64 = rng.gen_range(-0.35..0.35);
        scores.push(s);
        labels.push(s + noise > 0.5);
    }
    if n >= 2 {
        labels[0] = true;
        labels[1] = false;
    }
    (scores, labels)
}

/// A slice of up to `max_n` points (at least 2) with both classes.
pub fn slice(rng: &mut StdRng, key: &str, max_n: usize) -> SliceScores {
    let n = rng.gen_range(2..=max_n);
    let (scores, labels) = scores_labels(rng, n);
    SliceScores {
        key: key.to_string(),
        scores,
        labels,
    }
}

/// Two equally sized slices where `high` is `low` shifted upward, with a
/// higher base rate. Every positive-prediction rate reachable in one slice
/// is reachable in the other, so demographic parity is feasible exactly.
pub fn feasible_parity_pair(rng: &mut StdRng, max_n: usize) -> (SliceScores, SliceScores) {
    let m = rng.gen_range(4..=max_n);
    let shift = rng.gen_range(0.15..0.35);
    let mut low: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..(1.0 - shift))).collect();
    low.sort_by(f64::total_cmp);
    let high: Vec<f64> = low.iter().map(|s| s + shift).collect();
    let label_low: Vec<bool> = low.iter().map(|s| *s > 0.55).collect();
    let label_high: Vec<bool> = high.iter().map(|s| *s > 0.45).collect();
    let mut a = SliceScores {
        key: "high".into(),
        scores: high,
        labels: label_high,
    };
    let mut b = SliceScores {
        key: "low".into(),
        scores: low,
        labels: label_low,
    };
    // keep both classes in each slice
    a.labels[0] = false;
    *a.labels.last_mut().unwrap() = true;
    b.labels[0] = false;
    *b.labels.last_mut().unwrap() = true;
    (a, b)
}

pub struct MixedOptions {
    pub max_points: usize,
    pub missing: bool,
    /// Chance that a row repeats an earlier one, creating exact distance ties.
    pub duplicate_rate: f64,
}

impl Default for MixedOptions {
    fn default() -> Self {
        MixedOptions {
            max_points: 200,
            missing: false,
            duplicate_rate: 0.1,
        }
    }
}

/// Random dataset with 1 to 4 numeric features on varied scales and 1 to 3
/// categorical features.
pub fn mixed_dataset(rng: &mut StdRng, opts: &MixedOptions) -> Dataset {
    let n = rng.gen_range(2..=opts.max_points);
    let numeric = rng.gen_range(1..=4);
    let categorical = rng.gen_range(1..=3);
    let mut features = Vec::new();
    let mut scales = Vec::new();
    for j in 0..numeric {
        features.push(Feature {
            name: format!("n{j}"),
            kind: FeatureKind::Numeric,
        });
        scales.push(10f64.powi(rng.gen_range(-2..4)));
    }
    let mut vocab = Vec::new();
    for j in 0..categorical {
        features.push(Feature {
            name: format!("c{j}"),
            kind: FeatureKind::Categorical,
        });
        vocab.push(rng.gen_range(2..=5));
    }

    let mut rows: Vec<Vec<Value>> = Vec::with_capacity(n);
    for _ in 0..n {
        if !rows.is_empty() && rng.gen_bool(opts.duplicate_rate) {
            let copy = rows[rng.gen_range(0..rows.len())].clone();
            rows.push(copy);
            continue;
        }
        let mut row = Vec::with_capacity(features.len());
        for scale in &scales {
            row.push(Value::Number((rng.gen::<f64>() * scale * 1000.0).round() / 1000.0));
        }
        for &k in &vocab {
            row.push(Value::Text(format!("v{}", rng.gen_range(0..k))));
        }
        if opts.missing {
            for v in row.iter_mut() {
                if rng.gen_bool(0.05) {
                    *v = Value::Missing;
                }
            }
        }
        rows.push(row);
    }
    Dataset::from_rows(features, rows).expect("generated rows match the schema")
}

/// Numeric dataset for scale runs: `n` rows, `features` columns, with a
/// binary `label` column appended.
pub fn numeric_csv(rng: &mut StdRng, n: usize, features: usize) -> String {
    let mut out = String::with_capacity(n * features * 8);
    let header: Vec<String> = (0..features).map(|j| format!("f{j}")).collect();
    out.push_str(&header.join(","));
    out.push_str(",label\n");
    for _ in 0..n {
        let mut sum = 0.0;
        for j in 0..features {
            let x: f64 = rng.gen_range(-3.0..3.0);
            sum += x;
            if j > 0 {
                out.push(',');
            }
            out.push_str(&format!("{x:.4}"));
        }
        let label = u8::from(sum + rng.gen_range(-2.0..2.0) > 0.0);
        out.push_str(&format!(",{label}\n"));
    }
    out
}
