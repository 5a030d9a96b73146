use rand::Rng;
use whatif_core::performance::{
    candidate_thresholds, confusion_at, optimize_single_threshold, roc_curve, CostRatio,
};
use whatif_testkit::gen;
use whatif_testkit::oracle;

#[test]
fn single_threshold_accuracy_matches_exhaustive_sweep() {
    let mut rng = gen::rng(1);
    for _ in 0..200 {
        let n = rng.gen_range(2..=500);
        let (scores, labels) = gen::scores_labels(&mut rng, n);
        let choice = optimize_single_threshold(&scores, &labels, CostRatio::default()).unwrap();
        assert_eq!(choice.confusion.accuracy(), oracle::best_accuracy(&scores, &labels));
    }
}

#[test]
fn chosen_threshold_is_the_smallest_optimal_candidate() {
    let mut rng = gen::rng(2);
    for _ in 0..100 {
        let n = rng.gen_range(2..=60);
        let (scores, labels) = gen::scores_labels(&mut rng, n);
        let r = CostRatio::new([0.25, 1.0, 4.0][rng.gen_range(0..3)]).unwrap();
        let choice = optimize_single_threshold(&scores, &labels, r).unwrap();
        let costs: Vec<(f64, f64)> = candidate_thresholds(&scores)
            .into_iter()
            .map(|t| {
                let c = oracle::count_at(&scores, &labels, t);
                (t, r.value() * c.fp as f64 + c.fn_ as f64)
            })
            .collect();
        let min = costs.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
        let first = costs.iter().find(|c| c.1 == min).unwrap();
        assert_eq!((choice.threshold, choice.cost), *first);
    }
}

#[test]
fn threshold_non_decreasing_in_cost_ratio() {
    let mut rng = gen::rng(3);
    for _ in 0..100 {
        let n = rng.gen_range(2..=300);
        let (scores, labels) = gen::scores_labels(&mut rng, n);
        let ts: Vec<f64> = [0.25, 0.5, 1.0, 2.0, 4.0]
            .iter()
            .map(|&r| optimize_single_threshold(&scores, &labels, CostRatio::new(r).unwrap()).unwrap().threshold)
            .collect();
        assert!(ts.windows(2).all(|w| w[0] <= w[1]), "{ts:?}");
    }
}

#[test]
fn confusion_matches_counting_oracle() {
    let mut rng = gen::rng(4);
    for _ in 0..50 {
        let (scores, labels) = gen::scores_labels(&mut rng, 50);
        let t: f64 = rng.gen();
        let cm = confusion_at(&scores, &labels, t);
        let c = oracle::count_at(&scores, &labels, t);
        assert_eq!((cm.tp, cm.fp, cm.tn, cm.fn_), (c.tp, c.fp, c.tn, c.fn_));
    }
}

#[test]
fn auc_matches_mann_whitney() {
    let mut rng = gen::rng(5);
    for _ in 0..50 {
        let n = rng.gen_range(2..=30);
        let (scores, labels) = gen::scores_labels(&mut rng, n);
        let roc = roc_curve(&scores, &labels).unwrap();
        assert!((roc.auc - oracle::mann_whitney_auc(&scores, &labels)).abs() < 1e-9);
    }
}

#[test]
fn roc_is_monotone_with_fixed_endpoints() {
    let mut rng = gen::rng(6);
    for _ in 0..50 {
        let n = rng.gen_range(2..=100);
        let (scores, labels) = gen::scores_labels(&mut rng, n);
        let roc = roc_curve(&scores, &labels).unwrap();
        let first = roc.points.first().unwrap();
        let last = roc.points.last().unwrap();
        assert_eq!((first.threshold, first.fpr, first.tpr), (0.0, 1.0, 1.0));
        assert_eq!((last.fpr, last.tpr), (0.0, 0.0));
        for w in roc.points.windows(2) {
            assert!(w[0].threshold < w[1].threshold);
            assert!(w[0].fpr >= w[1].fpr && w[0].tpr >= w[1].tpr);
        }
        assert!((0.0..=1.0).contains(&roc.auc));
    }
}
