use rand::Rng;
use whatif_core::dataset::{Dataset, Feature, FeatureKind, Value};
use whatif_core::model::{PredictionOutput, TaskKind};
use whatif_core::performance::{
    optimize_fairness, partition, regression_metrics, slice_metrics, ConfusionMatrix, CostRatio, FairnessStrategy,
    GroundTruthBinding, SliceSort, SliceSpec, Thresholds,
};
use whatif_testkit::gen;
use whatif_testkit::oracle;

fn labelled(rng: &mut rand::rngs::StdRng, n: usize) -> (Dataset, Vec<f64>) {
    let (scores, labels) = gen::scores_labels(rng, n);
    let features = vec![
        Feature { name: "sex".into(), kind: FeatureKind::Categorical },
        Feature { name: "race".into(), kind: FeatureKind::Categorical },
        Feature { name: "age".into(), kind: FeatureKind::Numeric },
        Feature { name: "label".into(), kind: FeatureKind::Categorical },
    ];
    let rows = labels
        .iter()
        .map(|&l| {
            vec![
                Value::Text(["F", "M"][rng.gen_range(0..2)].into()),
                Value::Text(["A", "B", "C"][rng.gen_range(0..3)].into()),
                if rng.gen_bool(0.05) { Value::Missing } else { Value::Number(rng.gen_range(17..90) as f64) },
                Value::Text(if l { "yes" } else { "no" }.into()),
            ]
        })
        .collect();
    (Dataset::from_rows(features, rows).unwrap(), scores)
}

#[test]
fn slice_matrices_sum_to_whole_dataset() {
    let mut rng = gen::rng(40);
    let binding = GroundTruthBinding::binary("label", "yes");
    for round in 0..30 {
        let n = rng.gen_range(10..300);
        let (ds, scores) = labelled(&mut rng, n);
        let preds: Vec<PredictionOutput> = scores.iter().map(|&s| PredictionOutput::Binary(s)).collect();
        let spec = match round % 3 {
            0 => SliceSpec::by(&["sex"]),
            1 => SliceSpec::by(&["sex", "race"]),
            _ => SliceSpec::by(&["race", "age"]),
        };
        let slices = partition(&ds, &spec).unwrap();
        let thresholds = Thresholds::PerSlice {
            thresholds: slices.iter().map(|s| (s.key.clone(), rng.gen::<f64>())).collect(),
            default: 0.5,
        };
        let table = slice_metrics(&ds, &preds, TaskKind::BinaryClassification, &binding, &spec, &thresholds, SliceSort::Count)
            .unwrap();
        let mut total = ConfusionMatrix::default();
        for row in &table {
            let cm = row.confusion().unwrap();
            assert_eq!(cm.total(), row.count);
            total = total.add(cm);
        }
        // oracle: every point judged at its own slice's threshold
        let labels = binding.binary_labels(&ds).unwrap();
        let mut expected = oracle::Counts::default();
        for s in &slices {
            let t = thresholds.for_slice(&s.key);
            for &i in &s.indices {
                let c = oracle::count_at(&scores[i..=i], &labels[i..=i], t);
                expected.tp += c.tp;
                expected.fp += c.fp;
                expected.tn += c.tn;
                expected.fn_ += c.fn_;
            }
        }
        assert_eq!((total.tp, total.fp, total.tn, total.fn_), (expected.tp, expected.fp, expected.tn, expected.fn_));
        assert_eq!(total.total(), ds.len());
        assert_eq!(table.iter().map(|r| r.count).sum::<usize>(), ds.len());
    }
}

#[test]
fn counts_are_sorted_descending_by_default() {
    let mut rng = gen::rng(41);
    let (ds, scores) = labelled(&mut rng, 200);
    let preds: Vec<PredictionOutput> = scores.iter().map(|&s| PredictionOutput::Binary(s)).collect();
    let binding = GroundTruthBinding::binary("label", "yes");
    let table = slice_metrics(
        &ds,
        &preds,
        TaskKind::BinaryClassification,
        &binding,
        &SliceSpec::by(&["sex", "race"]),
        &Thresholds::default(),
        SliceSort::default(),
    )
    .unwrap();
    assert_eq!(table.len(), 6);
    assert!(table.windows(2).all(|w| w[0].count >= w[1].count));
}

#[test]
fn regression_metrics_match_formulas() {
    let mut rng = gen::rng(42);
    for _ in 0..50 {
        let n = rng.gen_range(1..200);
        let preds: Vec<f64> = (0..n).map(|_| rng.gen_range(-100.0..100.0)).collect();
        let targets: Vec<f64> = (0..n).map(|_| rng.gen_range(-100.0..100.0)).collect();
        let m = regression_metrics(&preds, &targets).unwrap();
        let diffs: Vec<f64> = preds.iter().zip(&targets).map(|(p, t)| p - t).collect();
        let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
        let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
        let sq: Vec<f64> = diffs.iter().map(|d| d * d).collect();
        assert!((m.mean_error - mean(&diffs)).abs() <= 1e-12);
        assert!((m.mean_absolute_error - mean(&abs)).abs() <= 1e-12);
        assert!((m.mean_squared_error - mean(&sq)).abs() <= 1e-12 * mean(&sq).max(1.0));
    }
}

#[test]
fn fairness_over_dataset_slices() {
    use whatif_core::model::{BuiltinModelSpec, ModelHandle, ModelSlot};
    let mut rng = gen::rng(43);
    let (ds, _) = labelled(&mut rng, 300);
    let m1 = ModelHandle::builtin(ModelSlot::Model1, BuiltinModelSpec::logistic(&[("age", 50.0, 15.0, 1.0)], 0.0)).unwrap();
    let m2 = ModelHandle::builtin(ModelSlot::Model2, BuiltinModelSpec::logistic(&[("age", 50.0, 15.0, -0.5)], 0.3)).unwrap();
    let binding = GroundTruthBinding::binary("label", "yes");
    let out = optimize_fairness(
        &ds,
        &[&m1, &m2],
        &binding,
        &SliceSpec::by(&["sex"]),
        FairnessStrategy::DemographicParity,
        CostRatio::default(),
        0.01,
    )
    .unwrap();
    assert_eq!(out.len(), 2);
    assert_eq!(out[0].model, ModelSlot::Model1);
    assert_eq!(out[1].model, ModelSlot::Model2);
    assert!(out.iter().all(|a| a.assignment.slices.len() == 2));
}
