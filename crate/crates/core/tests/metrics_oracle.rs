//! Metrics against a brute-force reference that expands the confusion matrix
//! into explicit (truth, prediction) pairs and counts per class.

use proptest::prelude::*;
use reparam_core::trainkit::{ConfusionMatrix, Metrics};

fn oracle(pairs: &[(usize, usize)], n: usize) -> Metrics {
    let total = pairs.len() as f64;
    let correct = pairs.iter().filter(|(t, p)| t == p).count() as f64;
    let mut recalls = Vec::new();
    let mut f1_weighted = 0.0;
    let mut f1s = Vec::new();
    for c in 0..n {
        let tp = pairs.iter().filter(|&&(t, p)| t == c && p == c).count() as f64;
        let fp = pairs.iter().filter(|&&(t, p)| t != c && p == c).count() as f64;
        let fn_ = pairs.iter().filter(|&&(t, p)| t == c && p != c).count() as f64;
        let support = tp + fn_;
        if support == 0.0 && tp + fp == 0.0 {
            continue;
        }
        // F1 = 2TP / (2TP + FP + FN) is the same harmonic mean, written
        // without precision and recall.
        let f1 = if tp == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fn_) };
        f1s.push(f1);
        if support > 0.0 {
            recalls.push(tp / support);
            f1_weighted += f1 * support;
        }
    }
    Metrics {
        wa: correct / total,
        ua: recalls.iter().sum::<f64>() / recalls.len() as f64,
        wf1: f1_weighted / total,
        mf1: f1s.iter().sum::<f64>() / f1s.len() as f64,
    }
}

fn expand(rows: &[Vec<u64>]) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for (t, row) in rows.iter().enumerate() {
        for (p, &k) in row.iter().enumerate() {
            pairs.extend(std::iter::repeat_n((t, p), k as usize));
        }
    }
    pairs
}

fn square(n: usize) -> impl Strategy<Value = Vec<Vec<u64>>> {
    prop::collection::vec(prop::collection::vec(0u64..12, n), n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn matches_brute_force(rows in (2usize..=7).prop_flat_map(square)) {
        let n = rows.len();
        let pairs = expand(&rows);
        prop_assume!(!pairs.is_empty());
        let got = ConfusionMatrix::from_counts(&rows).unwrap().metrics().unwrap();
        let want = oracle(&pairs, n);
        for (a, b) in [(got.wa, want.wa), (got.ua, want.ua), (got.wf1, want.wf1), (got.mf1, want.mf1)] {
            prop_assert!((a - b).abs() <= 1e-12, "{got:?} vs {want:?}");
        }
    }
}

#[test]
fn hand_case() {
    let m = ConfusionMatrix::from_counts(&[vec![3, 1], vec![1, 1]]).unwrap().metrics().unwrap();
    assert!((m.wa - 0.667).abs() < 1e-3);
    assert_eq!(m.ua, 0.625);
}
