//! Acceptance gate for the three-stage detector.
//!
//! One test per acceptance criterion; each prints a `[PASS]`/`[FAIL]` line
//! (visible with `cargo test --test acceptance -- --nocapture`). The
//! known-answer criteria feed the reference confusion matrices reported
//! for the original gas-pipeline corpus through our metrics code and
//! require every self-consistent reference figure to reproduce. The
//! remaining criteria check the pipeline's own guarantees on synthetic
//! data sized like the corpus, and — when a converted copy of the corpus
//! is supplied via `GAS_PIPELINE_CSV` — reproduce the reference accuracies
//! end to end.

use gasguard::cascade::{train_cascade, CascadeModel, StageConfigs};
use gasguard::forest::{best_split, gini, train_forest, Forest, Split, TrainConfig};
use gasguard::impute::{detect_missing, mice_impute, ImputationConfig};
use gasguard::ingest::{
    generate_synthetic, load_dataset, Dataset, SynthesisSpec, CORPUS_CATEGORY_COUNTS,
};
use gasguard::metrics::{
    combined_two_stage, per_class_metrics, ClassMetrics, ConfusionMatrix, PerClassMetrics,
};
use gasguard::partition::{make_folds, stratified_split3};
use gasguard::taxonomy::{feature, CategoryLabel, FeatureSchema, SubclassLabel, Taxonomy};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::panic::AssertUnwindSafe;
use std::sync::OnceLock;
use std::time::Instant;

/// Reference rates carry three decimals, so anything closer than half the
/// last printed digit is a reproduction.
const RATE_TOL: f64 = 5e-4;
/// Reference percentages mix rounding styles; two hundredths of a point
/// covers them all.
const PERCENT_TOL: f64 = 0.02;

fn gate<F: FnOnce()>(name: &str, check: F) {
    match std::panic::catch_unwind(AssertUnwindSafe(check)) {
        Ok(()) => println!("[PASS] {name}"),
        Err(panic) => {
            println!("[FAIL] {name}");
            std::panic::resume_unwind(panic);
        }
    }
}

fn assert_close(actual: f64, expected: f64, tolerance: f64, what: &str) {
    assert!(
        (actual - expected).abs() <= tolerance,
        "{what}: computed {actual} vs reference {expected}"
    );
}

// ---------------------------------------------------------------------------
// Reference results for the original corpus (fold 1, 67/33 split).
// ---------------------------------------------------------------------------

const STAGE1_MATRIX: [[u64; 2]; 2] = [[71309, 370], [1313, 18597]];

const STAGE2_MATRIX: [[u64; 7]; 7] = [
    [1881, 650, 0, 0, 0, 0, 0],
    [511, 3781, 0, 0, 0, 0, 0],
    [0, 0, 2522, 15, 0, 2, 0],
    [0, 0, 22, 6835, 0, 5, 0],
    [0, 0, 0, 0, 1666, 0, 0],
    [0, 0, 6, 15, 0, 706, 0],
    [0, 0, 0, 0, 10, 0, 1283],
];

const STAGE3_LABELS: [&[u32]; 7] = [
    &[29, 30, 31, 32],
    &[25, 26, 27, 28, 33, 34, 35],
    &[13, 14, 15, 16, 17],
    &[1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12],
    &[19, 21, 22],
    &[18],
    &[20, 23, 24],
];

const STAGE3_CAT1: [[u64; 4]; 4] =
    [[400, 7, 86, 87], [0, 706, 0, 0], [52, 0, 527, 59], [74, 0, 83, 450]];

const STAGE3_CAT2: [[u64; 7]; 7] = [
    [368, 41, 3, 42, 2, 4, 17],
    [37, 479, 0, 45, 0, 4, 6],
    [2, 0, 671, 1, 2, 0, 14],
    [35, 74, 3, 423, 51, 13, 26],
    [0, 0, 7, 6, 505, 0, 15],
    [0, 0, 7, 2, 0, 647, 27],
    [1, 0, 7, 3, 10, 17, 675],
];

const STAGE3_CAT3: [[u64; 5]; 5] =
    [[513, 1, 1, 0, 2], [0, 516, 1, 0, 1], [1, 1, 506, 1, 1], [0, 1, 1, 540, 1], [0, 2, 1, 0, 448]];

const STAGE3_CAT4: [[u64; 12]; 12] = [
    [569, 1, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0],
    [1, 431, 0, 0, 0, 6, 0, 0, 1, 6, 0, 0],
    [0, 0, 573, 1, 0, 0, 0, 0, 0, 0, 0, 0],
    [0, 0, 0, 655, 0, 0, 0, 0, 0, 0, 0, 0],
    [0, 0, 0, 0, 481, 2, 0, 1, 0, 0, 0, 1],
    [1, 2, 0, 0, 0, 692, 0, 0, 0, 5, 0, 0],
    [1, 0, 0, 1, 0, 0, 512, 0, 1, 0, 0, 0],
    [0, 0, 0, 0, 2, 0, 0, 609, 0, 1, 0, 0],
    [0, 0, 0, 1, 0, 0, 0, 0, 458, 1, 0, 0],
    [0, 1, 0, 0, 0, 0, 1, 0, 2, 515, 0, 0],
    [0, 1, 1, 2, 0, 0, 0, 0, 0, 0, 624, 0],
    [0, 0, 0, 0, 0, 1, 0, 1, 0, 0, 0, 696],
];

const STAGE3_CAT5: [[u64; 3]; 3] = [[544, 1, 0], [0, 588, 0], [0, 0, 533]];

const STAGE3_CAT6: [[u64; 1]; 1] = [[727]];

const STAGE3_CAT7: [[u64; 3]; 3] = [[187, 0, 5], [0, 693, 0], [2, 0, 406]];

/// `(accuracy %, correct, incorrect)` per category classifier, 1 through 7.
const STAGE3_SUMMARY: [(f64, u64, u64); 7] = [
    (82.30, 2083, 448),
    (87.79, 3768, 524),
    (99.37, 2523, 16),
    (99.32, 6815, 47),
    (99.94, 1665, 1),
    (100.00, 727, 0),
    (99.47, 1286, 7),
];

/// Per-subclass instance counts of the corpus fold: (subclass, training,
/// testing).
const SUBCLASS_COUNTS: [(u8, u64, u64); 35] = [
    (1, 1221, 571),
    (2, 1015, 445),
    (3, 1126, 574),
    (4, 1277, 655),
    (5, 931, 485),
    (6, 1326, 700),
    (7, 997, 515),
    (8, 1186, 612),
    (9, 936, 460),
    (10, 955, 519),
    (11, 1206, 628),
    (12, 1374, 698),
    (13, 1077, 517),
    (14, 1158, 518),
    (15, 1148, 510),
    (16, 1115, 543),
    (17, 963, 451),
    (18, 1449, 727),
    (19, 1089, 545),
    (20, 474, 192),
    (21, 1134, 588),
    (22, 1009, 533),
    (23, 1355, 693),
    (24, 752, 408),
    (25, 995, 477),
    (26, 1237, 571),
    (27, 1389, 690),
    (28, 1233, 625),
    (29, 1276, 580),
    (30, 1414, 706),
    (31, 1268, 638),
    (32, 1264, 607),
    (33, 1071, 533),
    (34, 1327, 683),
    (35, 1491, 713),
];

/// Per-category instance counts of the same fold: (category, training,
/// testing).
const CATEGORY_COUNTS: [(u8, u64, u64); 7] = [
    (1, 5222, 2531),
    (2, 8743, 4292),
    (3, 5361, 2539),
    (4, 13550, 6862),
    (5, 3232, 1666),
    (6, 1449, 727),
    (7, 2581, 1293),
];

fn matrix_from<const N: usize>(labels: &[u32], counts: &[[u64; N]; N]) -> ConfusionMatrix {
    ConfusionMatrix::from_counts(labels, counts.iter().map(|row| row.to_vec()).collect())
        .expect("reference matrix is well-formed")
}

fn stage1_metrics() -> ClassMetrics {
    per_class_metrics(&matrix_from(&[0, 1], &STAGE1_MATRIX)).unwrap()
}

fn stage2_metrics() -> ClassMetrics {
    per_class_metrics(&matrix_from(&[1, 2, 3, 4, 5, 6, 7], &STAGE2_MATRIX)).unwrap()
}

fn stage3_metrics() -> Vec<ClassMetrics> {
    let matrices = [
        matrix_from(STAGE3_LABELS[0], &STAGE3_CAT1),
        matrix_from(STAGE3_LABELS[1], &STAGE3_CAT2),
        matrix_from(STAGE3_LABELS[2], &STAGE3_CAT3),
        matrix_from(STAGE3_LABELS[3], &STAGE3_CAT4),
        matrix_from(STAGE3_LABELS[4], &STAGE3_CAT5),
        matrix_from(STAGE3_LABELS[5], &STAGE3_CAT6),
        matrix_from(STAGE3_LABELS[6], &STAGE3_CAT7),
    ];
    matrices.iter().map(|m| per_class_metrics(m).unwrap()).collect()
}

/// `(tpr, fpr, tnr, fnr, precision, recall)` against a reference row.
fn assert_rates(actual: &PerClassMetrics, expected: [f64; 6], what: &str) {
    assert_close(actual.tpr, expected[0], RATE_TOL, &format!("{what} TPR"));
    assert_close(actual.fpr, expected[1], RATE_TOL, &format!("{what} FPR"));
    assert_close(actual.tnr, expected[2], RATE_TOL, &format!("{what} TNR"));
    assert_close(actual.fnr, expected[3], RATE_TOL, &format!("{what} FNR"));
    assert_close(actual.precision, expected[4], RATE_TOL, &format!("{what} precision"));
    assert_close(actual.recall, expected[5], RATE_TOL, &format!("{what} recall"));
}

#[test]
fn criterion1_metric_known_answers() {
    gate("criterion 1: reference matrices reproduce every reported figure", || {
        // Detection stage.
        let stage1 = stage1_metrics();
        assert_close(stage1.accuracy * 100.0, 98.16, PERCENT_TOL, "detection accuracy");
        assert_eq!(matrix_from(&[0, 1], &STAGE1_MATRIX).trace(), 89_906, "detection correct count");
        assert_rates(&stage1.per_class[0], [0.995, 0.066, 0.934, 0.005, 0.982, 0.995], "Normal");
        // The reference sheet prints 0.955 for the attack TNR, which
        // contradicts its own FPR column (TNR = 1 − FPR = 0.995); we
        // require the self-consistent value and reject the misprint.
        assert_rates(&stage1.per_class[1], [0.934, 0.005, 0.995, 0.066, 0.980, 0.934], "Attack");
        assert!((stage1.per_class[1].tnr - 0.955).abs() > 0.01);
        let weighted = &stage1.weighted;
        assert_close(weighted.tpr, 0.982, RATE_TOL, "detection weighted TPR");
        assert_close(weighted.fpr, 0.053, RATE_TOL, "detection weighted FPR");
        assert_close(weighted.tnr, 0.947, RATE_TOL, "detection weighted TNR");
        assert_close(weighted.fnr, 0.018, RATE_TOL, "detection weighted FNR");
        assert_close(weighted.precision, 0.982, RATE_TOL, "detection weighted precision");
        assert_close(weighted.recall, 0.982, RATE_TOL, "detection weighted recall");

        // Categorization stage.
        let stage2 = stage2_metrics();
        assert_close(stage2.accuracy * 100.0, 93.79, PERCENT_TOL, "categorization accuracy");
        let matrix = matrix_from(&[1, 2, 3, 4, 5, 6, 7], &STAGE2_MATRIX);
        assert_eq!(matrix.trace(), 18_674, "categorization correct count");
        assert_eq!(matrix.total() - matrix.trace(), 1_236, "categorization error count");
        // Reference-sheet inconsistencies, resolved from the matrix itself:
        // category 1's printed precision repeats its TPR and its printed
        // recall is the F1 score (the true column gives precision
        // 1881/2392 = 0.786, and recall = TPR = 0.743); category 2's
        // printed FNR transposes 0.119 into 0.190.
        let rows: [[f64; 6]; 7] = [
            [0.743, 0.029, 0.971, 0.257, 0.786, 0.743],
            [0.881, 0.042, 0.958, 0.119, 0.853, 0.881],
            [0.993, 0.002, 0.998, 0.007, 0.989, 0.993],
            [0.996, 0.002, 0.998, 0.004, 0.996, 0.996],
            [1.000, 0.001, 0.999, 0.000, 0.994, 1.000],
            [0.971, 0.000, 1.000, 0.029, 0.990, 0.971],
            [0.992, 0.000, 1.000, 0.008, 1.000, 0.992],
        ];
        for (class, expected) in stage2.per_class.iter().zip(rows) {
            assert_rates(class, expected, &format!("category {}", class.label));
        }
        assert!((stage2.per_class[1].fnr - 0.190).abs() > 0.01, "misprint must not reproduce");
        let weighted = &stage2.weighted;
        assert_close(weighted.tpr, 0.938, RATE_TOL, "categorization weighted TPR");
        assert_close(weighted.fpr, 0.014, RATE_TOL, "categorization weighted FPR");
        assert_close(weighted.tnr, 0.986, RATE_TOL, "categorization weighted TNR");
        assert_close(weighted.fnr, 0.062, RATE_TOL, "categorization weighted FNR");
        assert_close(weighted.precision, 0.937, RATE_TOL, "categorization weighted precision");
        assert_close(weighted.recall, 0.938, RATE_TOL, "categorization weighted recall");

        // Subclass stage, one classifier per category.
        let stage3 = stage3_metrics();
        let matrices_trace_total: Vec<(u64, u64)> = vec![
            (matrix_from(STAGE3_LABELS[0], &STAGE3_CAT1).trace(), 2531),
            (matrix_from(STAGE3_LABELS[1], &STAGE3_CAT2).trace(), 4292),
            (matrix_from(STAGE3_LABELS[2], &STAGE3_CAT3).trace(), 2539),
            (matrix_from(STAGE3_LABELS[3], &STAGE3_CAT4).trace(), 6862),
            (matrix_from(STAGE3_LABELS[4], &STAGE3_CAT5).trace(), 1666),
            (matrix_from(STAGE3_LABELS[5], &STAGE3_CAT6).trace(), 727),
            (matrix_from(STAGE3_LABELS[6], &STAGE3_CAT7).trace(), 1293),
        ];
        for (i, ((metrics, (trace, total)), (accuracy, correct, incorrect))) in
            stage3.iter().zip(matrices_trace_total).zip(STAGE3_SUMMARY).enumerate()
        {
            let what = format!("subclass classifier for category {}", i + 1);
            assert_close(metrics.accuracy * 100.0, accuracy, PERCENT_TOL, &what);
            assert_eq!(trace, correct, "{what} correct count");
            assert_eq!(total - trace, incorrect, "{what} error count");
        }
        // Weighted rate rows of the subclass summary. Category 2's printed
        // FNR (0.202) again transposes 1 − TPR = 0.122; category 6 is the
        // single-subclass passthrough, where no negative population exists
        // (our metrics flag TNR/FPR as ill-defined instead of inventing a
        // value).
        let weighted_rows: [[f64; 6]; 7] = [
            [0.823, 0.057, 0.943, 0.177, 0.822, 0.823],
            [0.878, 0.020, 0.980, 0.122, 0.876, 0.878],
            [0.994, 0.002, 0.998, 0.006, 0.994, 0.994],
            [0.993, 0.001, 0.999, 0.007, 0.993, 0.993],
            [0.999, 0.000, 1.000, 0.001, 0.999, 0.999],
            [1.000, 0.000, 1.000, 0.000, 1.000, 1.000],
            [0.995, 0.002, 0.998, 0.005, 0.995, 0.995],
        ];
        for (i, (metrics, expected)) in stage3.iter().zip(weighted_rows).enumerate() {
            let what = format!("category {} weighted", i + 1);
            let weighted = &metrics.weighted;
            assert_close(weighted.tpr, expected[0], RATE_TOL, &format!("{what} TPR"));
            assert_close(weighted.fnr, expected[3], RATE_TOL, &format!("{what} FNR"));
            assert_close(weighted.recall, expected[5], RATE_TOL, &format!("{what} recall"));
            if i == 5 {
                assert!(!metrics.per_class[0].negative_rates_defined);
                assert!(!metrics.ill_defined.is_empty());
                assert_close(weighted.precision, 1.0, RATE_TOL, &format!("{what} precision"));
            } else {
                assert_close(weighted.fpr, expected[1], RATE_TOL, &format!("{what} FPR"));
                assert_close(weighted.tnr, expected[2], RATE_TOL, &format!("{what} TNR"));
                assert_close(
                    weighted.precision,
                    expected[4],
                    RATE_TOL,
                    &format!("{what} precision"),
                );
            }
        }
    });
}

#[test]
fn criterion2_combined_two_stage_figures() {
    gate("criterion 2: combined detection+categorization figures", || {
        let stage1 = stage1_metrics();
        let stage2 = stage2_metrics();
        let combined = combined_two_stage(&stage1, &stage2);
        assert_close(combined.accuracy, 0.9206, 1e-4, "combined accuracy");
        assert_close(combined.precision, 0.920, RATE_TOL, "combined precision");
        assert_close(combined.recall, 0.921, RATE_TOL, "combined recall");
        // The reference product quoted with four-decimal factors.
        let rounded = (0.9816f64 * 0.9379 * 10_000.0).round() / 10_000.0;
        assert_eq!(rounded, 0.9206);
    });
}

#[test]
fn criterion3_taxonomy_count_conservation() {
    gate("criterion 3: per-subclass counts group consistently by category", || {
        let taxonomy = Taxonomy::shared();
        let mut train_by_category: BTreeMap<u8, u64> = BTreeMap::new();
        let mut test_by_category: BTreeMap<u8, u64> = BTreeMap::new();
        for (subclass, train, test) in SUBCLASS_COUNTS {
            let category =
                taxonomy.subclass_to_category(SubclassLabel::new(subclass).unwrap()).unwrap().get();
            *train_by_category.entry(category).or_default() += train;
            *test_by_category.entry(category).or_default() += test;
        }
        for (category, train, test) in CATEGORY_COUNTS {
            assert_eq!(test_by_category[&category], test, "testing count for category {category}");
            if category == 3 {
                // The reference count sheets disagree with each other here:
                // the per-subclass sheet totals 5461 while the per-category
                // sheet says 5361, a one-digit transcription slip of
                // exactly 100. Both cannot hold at once; we pin the
                // discrepancy so any change in our grouping still fails.
                assert_eq!(train_by_category[&category], train + 100);
            } else {
                assert_eq!(
                    train_by_category[&category], train,
                    "training count for category {category}"
                );
            }
        }
        // Totals on the testing side are exact across all three levels.
        let test_total: u64 = CATEGORY_COUNTS.iter().map(|&(_, _, t)| t).sum();
        assert_eq!(test_total, 19_910);
        assert_eq!(test_total + 71_679, 91_589);
        let train_total: u64 = CATEGORY_COUNTS.iter().map(|&(_, t, _)| t).sum();
        assert_eq!(train_total, 40_138);
        assert_eq!(train_total + 142_901, 183_039);
    });
}

/// Exhaustive reference for the splitter: enumerate every boundary of
/// every candidate feature, score by exact rational arithmetic, apply the
/// same tie rules.
fn reference_best_split(
    rows: &[Vec<f64>],
    labels: &[u32],
    candidates: &[usize],
    min_leaf: usize,
) -> Option<Split> {
    let mut classes: Vec<u32> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let side_counts = |feature: usize, threshold: f64| {
        let mut left = vec![0u128; classes.len()];
        let mut right = vec![0u128; classes.len()];
        for (row, label) in rows.iter().zip(labels) {
            let class = classes.binary_search(label).unwrap();
            if row[feature] <= threshold {
                left[class] += 1;
            } else {
                right[class] += 1;
            }
        }
        (left, right)
    };
    let node_ss: u128 = {
        let (all, _) = side_counts(0, f64::INFINITY);
        all.iter().map(|&c| c * c).sum()
    };

    let mut best: Option<(u128, u128, Split)> = None;
    for &feature in candidates {
        let mut values: Vec<f64> = rows.iter().map(|r| r[feature]).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        for pair in values.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let mut threshold = 0.5 * (a + b);
            if !(a <= threshold && threshold < b) {
                threshold = a;
            }
            let (left, right) = side_counts(feature, threshold);
            let nl: u128 = left.iter().sum();
            let nr: u128 = right.iter().sum();
            if nl < min_leaf as u128 || nr < min_leaf as u128 {
                continue;
            }
            let ssl: u128 = left.iter().map(|&c| c * c).sum();
            let ssr: u128 = right.iter().map(|&c| c * c).sum();
            let (num, den) = (ssl * nr + ssr * nl, nl * nr);
            let wins = match &best {
                None => true,
                Some((bn, bd, _)) => num * bd > bn * den,
            };
            if wins {
                best = Some((num, den, Split { feature, threshold }));
            }
        }
    }
    best.and_then(|(num, den, split)| (num * rows.len() as u128 > node_ss * den).then_some(split))
}

#[test]
fn criterion4_forest_correctness() {
    gate("criterion 4: splitter oracle, impurity identities, tree fit, determinism", || {
        // 1000 random instances against the exhaustive splitter.
        let mut rng = ChaCha8Rng::seed_from_u64(9001);
        let grid = [0.0f64, 1.0, 2.5, 7.0, -3.0];
        for trial in 0..1000 {
            let n = rng.gen_range(2..=20);
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..3).map(|_| grid[rng.gen_range(0..grid.len())]).collect())
                .collect();
            let labels: Vec<u32> = (0..n).map(|_| rng.gen_range(0..3)).collect();
            let mut order = vec![0usize, 1, 2];
            order.shuffle(&mut rng);
            let min_leaf = rng.gen_range(1..=2);
            assert_eq!(
                best_split(&rows, &labels, &order, min_leaf),
                reference_best_split(&rows, &labels, &order, min_leaf),
                "trial {trial}: rows {rows:?} labels {labels:?} order {order:?} min {min_leaf}"
            );
        }

        // Impurity identities: uniform k-class mixes and two-class rationals.
        assert_eq!(gini(&[]), 0.0);
        for k in 1u32..=6 {
            let labels: Vec<u32> = (0..k).collect();
            let expected = 1.0 - 1.0 / f64::from(k);
            assert!((gini(&labels) - expected).abs() < 1e-15, "uniform {k}-class");
        }
        for (a, b) in [(1u32, 1u32), (1, 3), (2, 5), (10, 90), (7, 7)] {
            let mut labels = vec![0u32; a as usize];
            labels.extend(vec![1u32; b as usize]);
            let n = f64::from(a + b);
            let expected = 1.0 - (f64::from(a * a) + f64::from(b * b)) / (n * n);
            assert!((gini(&labels) - expected).abs() < 1e-15, "two-class ({a},{b})");
        }

        // A fully grown single tree fits consistent (distinct-row) data.
        let mut rng = ChaCha8Rng::seed_from_u64(9002);
        let rows: Vec<Vec<f64>> = (0..200)
            .map(|i| {
                let mut row = vec![f64::from(i)];
                row.extend((0..3).map(|_| rng.gen_range(-4.0..4.0)));
                row
            })
            .collect();
        let labels: Vec<u32> = (0..200).map(|_| rng.gen_range(0..5)).collect();
        let config = TrainConfig {
            tree_count: 1,
            max_features: Some(4),
            bootstrap: false,
            seed: 9003,
            ..TrainConfig::default()
        };
        let tree = train_forest(&rows, &labels, &config).unwrap();
        for (row, &label) in rows.iter().zip(&labels) {
            assert_eq!(tree.predict(row), label, "training-set fit");
        }

        // Determinism: identical seeds give identical bytes and predictions.
        let config = TrainConfig { tree_count: 11, seed: 9004, ..TrainConfig::default() };
        let first = train_forest(&rows, &labels, &config).unwrap();
        let second = train_forest(&rows, &labels, &config).unwrap();
        let serialize = |forest: &Forest| {
            let mut bytes = Vec::new();
            forest.save(&mut bytes).unwrap();
            bytes
        };
        assert_eq!(serialize(&first), serialize(&second));
        let restored = Forest::load(serialize(&first).as_slice()).unwrap();
        for row in &rows {
            assert_eq!(first.predict(row), second.predict(row));
            assert_eq!(first.predict(row), restored.predict(row));
        }
    });
}

// ---------------------------------------------------------------------------
// Shared synthetic fixture: corpus-like class balance at 1/10 scale, a
// planted linear pressure relation, and 10% missing pressure readings.
// ---------------------------------------------------------------------------

struct Fixture {
    raw: Dataset,
    imputed: Dataset,
    splits: [Vec<usize>; 3],
    test: Dataset,
    model: CascadeModel,
    build_seconds: f64,
}

static FIXTURE: OnceLock<Fixture> = OnceLock::new();

fn fixture() -> &'static Fixture {
    FIXTURE.get_or_init(|| {
        let start = Instant::now();
        let spec = SynthesisSpec::corpus_proportions(10, 90_001)
            .with_linked_pressure(2.0)
            .with_missing_rate(feature::PRESSURE_MEASUREMENT, 0.10);
        let raw = generate_synthetic(&spec).expect("valid spec");
        let imputed = mice_impute(&raw, &ImputationConfig::default()).expect("imputable");
        let splits = stratified_split3(&imputed, 90_002);
        let folds = make_folds(imputed.len(), &splits).expect("valid partition");
        let select = |indices: &[usize]| {
            Dataset::new(
                indices.iter().map(|&i| imputed.records[i].clone()).collect(),
                imputed.provenance,
            )
        };
        let train = select(&folds[0].train);
        let test = select(&folds[0].test);
        let defaults = StageConfigs::default();
        let configs = StageConfigs {
            stage1: TrainConfig { tree_count: 25, seed: 90_011, ..defaults.stage1 },
            stage2: TrainConfig { tree_count: 25, seed: 90_012, ..defaults.stage2 },
            stage3: TrainConfig { tree_count: 25, seed: 90_013, ..defaults.stage3 },
        };
        let model = train_cascade(&train, &configs).expect("trainable");
        Fixture { raw, imputed, splits, test, model, build_seconds: start.elapsed().as_secs_f64() }
    })
}

#[test]
fn criterion5_synthetic_pipeline_properties() {
    gate("criterion 5: pipeline invariants on corpus-proportioned synthetic data", || {
        let start = Instant::now();
        let fixture = fixture();
        let raw = &fixture.raw;
        let imputed = &fixture.imputed;

        // The scaled class balance is exact.
        let expected: BTreeMap<u8, usize> = CORPUS_CATEGORY_COUNTS
            .iter()
            .map(|&(category, count)| (category, (count as f64 / 10.0).round() as usize))
            .collect();
        assert_eq!(raw.category_histogram(), expected);
        assert_eq!(raw.len(), 27_463);

        // Imputation: complete output, untouched observed cells, planted
        // linear relation recovered on every filled cell.
        let mask = detect_missing(raw);
        let holes = &mask.rows_by_feature[feature::PRESSURE_MEASUREMENT];
        assert!(holes.len() > 2_000, "fixture should have ~2.7k holes, got {}", holes.len());
        assert_eq!(mask.total(), holes.len(), "only pressure readings go missing");
        assert!(imputed.records.iter().all(|r| r.is_complete()));
        for (before, after) in raw.records.iter().zip(&imputed.records) {
            for (x, y) in before.features.iter().zip(&after.features) {
                if let Some(x) = x {
                    assert_eq!(x.to_bits(), y.unwrap().to_bits(), "observed cell changed");
                }
            }
        }
        let mut worst: f64 = 0.0;
        for &row in holes {
            let record = &imputed.records[row];
            let pressure = record.features[feature::PRESSURE_MEASUREMENT].unwrap();
            let set_point = record.features[feature::SET_POINT].unwrap();
            worst = worst.max((pressure - 2.0 * set_point).abs());
        }
        assert!(worst <= 1e-6, "planted relation recovered to {worst}");

        // Stratification: within every subclass the three splits differ by
        // at most one record.
        for subclass in 0u8..=35 {
            let counts: Vec<usize> = fixture
                .splits
                .iter()
                .map(|split| {
                    split
                        .iter()
                        .filter(|&&row| imputed.records[row].subclass.get() == subclass)
                        .count()
                })
                .collect();
            let spread = counts.iter().max().unwrap() - counts.iter().min().unwrap();
            assert!(spread <= 1, "subclass {subclass}: {counts:?}");
        }

        // Routing closure: the pipeline output equals the manual
        // composition of stage predictions on every test record, and the
        // invocation counters account for the early exits exactly.
        let model = &fixture.model;
        let test = &fixture.test;
        model.reset_invocation_counts();
        let outputs = model.classify_dataset(test).expect("complete test rows");
        let rows: Vec<Vec<f64>> =
            test.records.iter().map(|r| r.features.iter().map(|v| v.unwrap()).collect()).collect();
        let mut flagged_attacks = 0u64;
        let mut routed_to_stage3 = 0u64;
        for (row, output) in rows.iter().zip(&outputs) {
            let composed = if model.stage1().predict(row) == 0 {
                SubclassLabel::NORMAL
            } else {
                flagged_attacks += 1;
                let category = model.stage2().predict(row) as u8;
                if category == 6 {
                    SubclassLabel::new(18).unwrap()
                } else {
                    routed_to_stage3 += 1;
                    let subclass = model.stage3(category).expect("trained").predict(row);
                    SubclassLabel::new(subclass as u8).unwrap()
                }
            };
            assert_eq!(*output, composed, "composition mismatch");
        }
        let counts = model.invocation_counts();
        assert_eq!(counts.stage1, test.len() as u64);
        assert_eq!(counts.stage2, flagged_attacks);
        assert_eq!(counts.stage3, routed_to_stage3);
        assert!(counts.stage2 < counts.stage1, "stage 1 must filter something");
        assert!(counts.stage3 < counts.stage2, "passthrough must skip stage 3");

        let elapsed = fixture.build_seconds + start.elapsed().as_secs_f64();
        assert!(elapsed < 300.0, "pipeline checks took {elapsed:.1}s, budget is 300s");
    });
}

#[test]
fn criterion6_corpus_reproduction_when_available() {
    let Some(path) = std::env::var_os("GAS_PIPELINE_CSV") else {
        println!(
            "[SKIP] criterion 6: set GAS_PIPELINE_CSV to a converted copy of the corpus \
             to check accuracy reproduction"
        );
        return;
    };
    gate("criterion 6: reference accuracies reproduce on the real corpus", || {
        let file = std::fs::File::open(&path).expect("corpus file opens");
        let dataset =
            load_dataset(std::io::BufReader::new(file), FeatureSchema::gas_pipeline()).unwrap();
        let imputed = mice_impute(&dataset, &ImputationConfig::default()).unwrap();
        let splits = stratified_split3(&imputed, 1);
        let folds = make_folds(imputed.len(), &splits).unwrap();
        let select = |indices: &[usize]| {
            Dataset::new(
                indices.iter().map(|&i| imputed.records[i].clone()).collect(),
                imputed.provenance,
            )
        };
        let model = train_cascade(&select(&folds[0].train), &StageConfigs::default()).unwrap();
        let reports = model.evaluate_stagewise(&select(&folds[0].test)).unwrap();

        let accuracy_of = |prefix: &str| {
            reports
                .iter()
                .find(|r| r.name.starts_with(prefix))
                .map(|r| r.metrics.accuracy * 100.0)
                .unwrap_or_else(|| panic!("no report named {prefix}*"))
        };
        let stage1 = accuracy_of("stage 1");
        println!("stage 1 accuracy {stage1:.2}%");
        assert!((stage1 - 98.16).abs() <= 1.0, "stage 1 accuracy {stage1:.2}%");
        let stage2 = accuracy_of("stage 2");
        println!("stage 2 accuracy {stage2:.2}%");
        assert!((stage2 - 93.79).abs() <= 2.0, "stage 2 accuracy {stage2:.2}%");

        let taxonomy = Taxonomy::shared();
        for (category, (reference, _, _)) in (1u8..=7).zip(STAGE3_SUMMARY) {
            let name = taxonomy.category_name(CategoryLabel::new(category).unwrap());
            let accuracy = accuracy_of(&format!("stage 3: {name}"));
            println!("stage 3 ({name}) accuracy {accuracy:.2}%");
            assert!(
                (accuracy - reference).abs() <= 3.0,
                "category {category} accuracy {accuracy:.2}% vs reference {reference:.2}%"
            );
        }
    });
}

#[test]
fn criterion7_end_to_end_accounting() {
    gate("criterion 7: end-to-end population accounting is exact", || {
        let fixture = fixture();
        let test = &fixture.test;
        let report = fixture.model.evaluate_end_to_end(test).unwrap();

        assert_eq!(report.matrix.total(), test.len() as u64);
        let histogram = test.subclass_histogram();
        for (i, &label) in report.matrix.labels().iter().enumerate() {
            let row_sum: u64 = report.matrix.row(i).iter().sum();
            let expected = histogram.get(&(label as u8)).copied().unwrap_or(0) as u64;
            assert_eq!(row_sum, expected, "population of subclass {label}");
        }

        // Measured accuracy, logged next to the stagewise view of the same
        // model (the pressure bands are deliberately collapsed by the
        // planted linear relation, so these are not expected to be high).
        let stagewise = fixture.model.evaluate_stagewise(test).unwrap();
        let stage1 = stagewise.iter().find(|r| r.name.starts_with("stage 1")).unwrap();
        println!(
            "end-to-end accuracy {:.4} over {} records; stagewise detection accuracy {:.4}",
            report.metrics.accuracy,
            report.matrix.total(),
            stage1.metrics.accuracy,
        );
        assert!(report.metrics.accuracy > 0.5, "pipeline should beat coin flips");
    });
}
