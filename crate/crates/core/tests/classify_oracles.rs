use proptest::prelude::*;
use rand::Rng as _;

use seg_uq::classify::{
    class_weights, eval_metrics, fit, mann_whitney_auc, objective, rfe, stratified_split, ClassifierModel, FitConfig,
};
use seg_uq::features::FeatureTable;
use seg_uq::seed::rng;

fn table(rows: Vec<Vec<f64>>) -> FeatureTable {
    let k = rows.first().map_or(0, Vec::len);
    FeatureTable::new(
        (0..rows.len()).map(|i| format!("s{i}")).collect(),
        (0..k).map(|j| format!("f{j}")).collect(),
        rows,
    )
    .unwrap()
}

/// Rows drawn around class-dependent centres so fits are informative.
fn toy(seed: u64, n: usize, k: usize, classes: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut r = rng(seed);
    let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    let rows = labels
        .iter()
        .map(|&c| (0..k).map(|j| (c as f64) * ((j % 3) as f64 - 1.0) + r.random_range(-1.0..1.0)).collect())
        .collect();
    (rows, labels)
}

fn binary_logistic(rows: &[Vec<f64>], labels: &[usize], reg: f64, dw: f64, db: f64) -> f64 {
    // two classes, one feature; optimal weights are ±dw/2 so the penalty is reg·dw²/2
    let w = class_weights(labels, &[0, 1], true);
    let mut f = 0.0;
    for (x, &y) in rows.iter().zip(labels) {
        let s = dw * x[0] + db;
        let margin = if y == 1 { s } else { -s };
        f += w[y] * (1.0 + (-margin).exp()).ln();
    }
    f + reg * dw * dw / 2.0
}

#[test]
fn one_feature_fit_matches_grid_search() {
    let (rows, labels) = toy(1, 30, 1, 2);
    let cfg = FitConfig { reg: 1.0, ..FitConfig::default() };
    let model = fit(&table(rows.clone()), &labels, &cfg).unwrap();
    assert!(model.converged);
    let dw = model.weights[0][1] - model.weights[0][0];
    let db = model.bias[1] - model.bias[0];
    let at_fit = binary_logistic(&rows, &labels, cfg.reg, dw, db);
    assert!((at_fit - model.loss).abs() < 1e-9 * model.loss.max(1.0), "{at_fit} vs {}", model.loss);

    let mut best = (f64::INFINITY, 0.0, 0.0);
    for i in -400..=400 {
        for j in -400..=400 {
            let (a, b) = (dw + i as f64 * 1e-3, db + j as f64 * 1e-3);
            let f = binary_logistic(&rows, &labels, cfg.reg, a, b);
            if f < best.0 {
                best = (f, a, b);
            }
        }
    }
    assert!(at_fit <= best.0 + 1e-9, "grid found {} below fitted {at_fit}", best.0);
    assert!((best.1 - dw).abs() <= 1e-3 && (best.2 - db).abs() <= 1e-3);
}

#[test]
fn duplicated_rows_with_doubled_penalty_give_the_same_model() {
    let (rows, labels) = toy(2, 24, 4, 3);
    let cfg = FitConfig { reg: 2.0, ..FitConfig::default() };
    let once = fit(&table(rows.clone()), &labels, &cfg).unwrap();
    let twice_rows: Vec<Vec<f64>> = rows.iter().chain(&rows).cloned().collect();
    let twice_labels: Vec<usize> = labels.iter().chain(&labels).copied().collect();
    let twice = fit(&table(twice_rows), &twice_labels, &FitConfig { reg: 4.0, ..cfg }).unwrap();
    for (a, b) in once.weights.iter().flatten().zip(twice.weights.iter().flatten()) {
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }
    assert!((2.0 * once.loss - twice.loss).abs() < 1e-6 * twice.loss);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fitted_point_beats_random_restarts(seed in 0u64..1000, classes in 2usize..5, reg in 0.1f64..20.0) {
        let (rows, labels) = toy(seed, 20, 3, classes);
        let cfg = FitConfig { reg, ..FitConfig::default() };
        let model = fit(&table(rows.clone()), &labels, &cfg).unwrap();
        prop_assert!(model.converged);
        let f0 = objective(&rows, &labels, &cfg, &model.weights, &model.bias).unwrap();
        let mut r = rng(seed ^ 0xabc);
        for _ in 0..20 {
            let scale = r.random_range(0.01..2.0);
            let w: Vec<Vec<f64>> = model.weights.iter().map(|row| row.iter().map(|v| v + scale * r.random_range(-1.0..1.0)).collect()).collect();
            let b: Vec<f64> = model.bias.iter().map(|v| v + scale * r.random_range(-1.0..1.0)).collect();
            prop_assert!(objective(&rows, &labels, &cfg, &w, &b).unwrap() >= f0 - 1e-9);
        }
    }

    #[test]
    fn row_order_does_not_change_the_fit(seed in 0u64..1000) {
        let (rows, labels) = toy(seed, 18, 3, 3);
        let cfg = FitConfig::default();
        let a = fit(&table(rows.clone()), &labels, &cfg).unwrap();
        let rev_rows: Vec<Vec<f64>> = rows.iter().rev().cloned().collect();
        let rev_labels: Vec<usize> = labels.iter().rev().copied().collect();
        let b = fit(&table(rev_rows), &rev_labels, &cfg).unwrap();
        let x = vec![0.3, -1.2, 0.7];
        for (p, q) in a.predict_values(&x).iter().zip(b.predict_values(&x)) {
            prop_assert!((p - q).abs() < 1e-6);
        }
    }

    #[test]
    fn rfe_keeps_k_features(seed in 0u64..1000, k in 1usize..6) {
        let (rows, labels) = toy(seed, 16, 6, 2);
        let (names, model) = rfe(&table(rows), &labels, k, &FitConfig::default()).unwrap();
        prop_assert_eq!(names.len(), k);
        prop_assert_eq!(model.weights.len(), k);
        let mut sorted = names.clone();
        sorted.sort_by_key(|n| n[1..].parse::<usize>().unwrap());
        prop_assert_eq!(sorted, names);
    }

    #[test]
    fn auc_matches_threshold_count(pos in prop::collection::vec(0u8..10, 1..12), neg in prop::collection::vec(0u8..10, 1..12)) {
        let p: Vec<f64> = pos.iter().map(|&v| v as f64).collect();
        let n: Vec<f64> = neg.iter().map(|&v| v as f64).collect();
        let mut wins = 0.0;
        for a in &p {
            for b in &n {
                wins += if a > b { 1.0 } else if a == b { 0.5 } else { 0.0 };
            }
        }
        prop_assert_eq!(mann_whitney_auc(&p, &n).unwrap(), wins / (p.len() * n.len()) as f64);
    }

    #[test]
    fn stratified_split_partitions_rows(labels in prop::collection::vec(0usize..4, 4..40), seed in any::<u64>()) {
        let (train, test) = stratified_split(&labels, 0.75, seed);
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        for c in 0..4 {
            if labels.contains(&c) {
                prop_assert!(train.iter().any(|&i| labels[i] == c));
            }
        }
    }
}

#[test]
fn metrics_of_a_known_confusion() {
    // 3 classes, rows of probabilities; predictions: 0,0,1,1,2,0
    let preds = vec![
        vec![0.8, 0.1, 0.1],
        vec![0.6, 0.3, 0.1],
        vec![0.2, 0.7, 0.1],
        vec![0.1, 0.5, 0.4],
        vec![0.1, 0.2, 0.7],
        vec![0.5, 0.1, 0.4],
    ];
    let labels = vec![0, 1, 1, 1, 2, 2];
    let m = eval_metrics(&preds, &labels, &[0, 1, 2]).unwrap();
    assert_eq!(m.confusion.matrix, vec![vec![1, 0, 0], vec![1, 2, 0], vec![1, 0, 1]]);
    // balanced accuracy: (1 + 2/3 + 1/2) / 3
    assert!((m.balanced_accuracy.unwrap() - (1.0 + 2.0 / 3.0 + 0.5) / 3.0).abs() < 1e-12);
    // kappa: po = 4/6, pe = (1·3 + 3·2 + 2·1) / 36
    let (po, pe) = (4.0 / 6.0, 11.0 / 36.0);
    assert!((m.kappa.unwrap() - (po - pe) / (1.0 - pe)).abs() < 1e-12);
    let brier: f64 = preds
        .iter()
        .zip(&labels)
        .map(|(p, &y)| p.iter().enumerate().map(|(c, v)| (v - if c == y { 1.0 } else { 0.0 }).powi(2)).sum::<f64>())
        .sum::<f64>()
        / 6.0;
    assert!((m.root_brier.unwrap() - brier.sqrt()).abs() < 1e-12);
}

#[test]
fn model_rows_follow_table_names() {
    let (rows, labels) = toy(3, 12, 2, 2);
    let model: ClassifierModel = fit(&table(rows), &labels, &FitConfig::default()).unwrap();
    assert_eq!(model.names, vec!["f0".to_string(), "f1".to_string()]);
    assert_eq!(model.classes, vec![0, 1]);
}
