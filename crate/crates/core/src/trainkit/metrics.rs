use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Counts with rows indexed by true class and columns by predicted class.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    n_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        Self {
            n_classes,
            counts: vec![0; n_classes * n_classes],
        }
    }

    pub fn from_counts(rows: &[Vec<u64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::shape("ConfusionMatrix::from_counts", "matrix must be square"));
        }
        Ok(Self {
            n_classes: n,
            counts: rows.concat(),
        })
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn record(&mut self, truth: usize, pred: usize) {
        assert!(truth < self.n_classes && pred < self.n_classes, "class out of range");
        self.counts[truth * self.n_classes + pred] += 1;
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.n_classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.n_classes.max(1)).map(<[u64]>::to_vec).collect()
    }

    pub fn metrics(&self) -> Result<Metrics> {
        metrics(self)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    #[serde(rename = "WA")]
    pub wa: f64,
    #[serde(rename = "UA")]
    pub ua: f64,
    #[serde(rename = "WF1")]
    pub wf1: f64,
    #[serde(rename = "MF1")]
    pub mf1: f64,
}

impl Metrics {
    pub fn mean(items: &[Metrics]) -> Option<Metrics> {
        if items.is_empty() {
            return None;
        }
        let n = items.len() as f64;
        let sum = |f: fn(&Metrics) -> f64| items.iter().map(f).sum::<f64>() / n;
        Some(Metrics {
            wa: sum(|m| m.wa),
            ua: sum(|m| m.ua),
            wf1: sum(|m| m.wf1),
            mf1: sum(|m| m.mf1),
        })
    }
}

/// Weighted accuracy (trace / total), unweighted accuracy (mean recall over
/// classes that occur in the truth), support-weighted F1, and macro F1 over
/// classes that occur in the truth or the predictions. A class with zero
/// precision and recall has F1 = 0.
pub fn metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::invalid("metrics of an empty confusion matrix"));
    }
    let n = cm.n_classes();
    let support: Vec<u64> = (0..n).map(|c| (0..n).map(|p| cm.get(c, p)).sum()).collect();
    let predicted: Vec<u64> = (0..n).map(|p| (0..n).map(|c| cm.get(c, p)).sum()).collect();
    let trace: u64 = (0..n).map(|c| cm.get(c, c)).sum();

    let mut recall_sum = 0.0;
    let mut present = 0usize;
    let mut wf1 = 0.0;
    let mut f1_sum = 0.0;
    let mut seen = 0usize;
    for c in 0..n {
        let tp = cm.get(c, c) as f64;
        let recall = if support[c] > 0 { tp / support[c] as f64 } else { 0.0 };
        let precision = if predicted[c] > 0 { tp / predicted[c] as f64 } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        if support[c] > 0 {
            recall_sum += recall;
            present += 1;
            wf1 += f1 * support[c] as f64;
        }
        if support[c] > 0 || predicted[c] > 0 {
            f1_sum += f1;
            seen += 1;
        }
    }
    Ok(Metrics {
        wa: trace as f64 / total as f64,
        ua: recall_sum / present as f64,
        wf1: wf1 / total as f64,
        mf1: f1_sum / seen as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_diagonal_scores_one() {
        let cm = ConfusionMatrix::from_counts(&[vec![5, 0, 0], vec![0, 2, 0], vec![0, 0, 9]]).unwrap();
        let m = cm.metrics().unwrap();
        assert_eq!((m.wa, m.ua, m.wf1, m.mf1), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn two_class_hand_case() {
        let cm = ConfusionMatrix::from_counts(&[vec![3, 1], vec![1, 1]]).unwrap();
        let m = cm.metrics().unwrap();
        assert!((m.wa - 4.0 / 6.0).abs() < 1e-12);
        assert!((m.ua - 0.625).abs() < 1e-12);
        // F1: class 0 = 0.75, class 1 = 0.5
        assert!((m.mf1 - 0.625).abs() < 1e-12);
        assert!((m.wf1 - (0.75 * 4.0 + 0.5 * 2.0) / 6.0).abs() < 1e-12);
    }

    #[test]
    fn constant_predictor_on_balanced_truth() {
        let mut cm = ConfusionMatrix::new(4);
        for c in 0..4 {
            for _ in 0..10 {
                cm.record(c, 2);
            }
        }
        let m = cm.metrics().unwrap();
        assert_eq!(m.ua, 0.25);
        assert_eq!(m.wa, 0.25);
    }

    #[test]
    fn empty_matrix_rejected() {
        assert!(ConfusionMatrix::new(3).metrics().is_err());
        assert!(ConfusionMatrix::from_counts(&[vec![1, 2]]).is_err());
    }

    #[test]
    fn json_keys_are_upper_case() {
        let v = serde_json::to_value(Metrics::default()).unwrap();
        let keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys, ["MF1", "UA", "WA", "WF1"]);
    }
}
