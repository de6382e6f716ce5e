//! Evaluation metrics and the logistic-regression probe.

mod probe;

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Tensor2;

pub use probe::{eval_probe, fit_probe, probe_objective, ProbeConfig, ProbeModel};

/// Pooled confusion counts for binary cells.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct F1Counts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl F1Counts {
    /// Accumulates cells; a prediction counts as positive when `pred >= threshold`.
    pub fn accumulate(&mut self, pred: &[f64], target: &[f64], threshold: f64) {
        for (&p, &y) in pred.iter().zip(target) {
            match (p >= threshold, y >= 0.5) {
                (true, true) => self.tp += 1,
                (true, false) => self.fp += 1,
                (false, true) => self.fn_ += 1,
                (false, false) => {}
            }
        }
    }

    /// `2TP / (2TP + FP + FN)`, with 1 when there are no positives at all.
    pub fn f1(&self) -> f64 {
        let den = 2 * self.tp + self.fp + self.fn_;
        if den == 0 {
            1.0
        } else {
            (2 * self.tp) as f64 / den as f64
        }
    }
}

/// Micro-averaged F1 over every cell of two binary matrices.
pub fn micro_f1(pred: &Tensor2, target: &Tensor2) -> Result<f64> {
    pred.check_same_shape(target, "micro_f1")?;
    let mut c = F1Counts::default();
    c.accumulate(pred.data(), target.data(), 0.5);
    Ok(c.f1())
}

/// Cosine similarity of two rows; 0 when either is all-zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

/// Mean row-wise cosine similarity.
pub fn mean_cosine_similarity(probs: &Tensor2, target: &Tensor2) -> Result<f64> {
    probs.check_same_shape(target, "mean_cosine_similarity")?;
    if probs.rows() == 0 {
        return Ok(0.0);
    }
    let sum: f64 = (0..probs.rows()).map(|i| cosine(probs.row(i), target.row(i))).sum();
    Ok(sum / probs.rows() as f64)
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Maps labels to 0-based ids in order of first appearance.
fn dense_ids<T: Eq + Hash>(labels: &[T]) -> Vec<usize> {
    let mut ids: HashMap<&T, usize> = HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = ids.len();
            *ids.entry(l).or_insert(next)
        })
        .collect()
}

/// Normalized mutual information with arithmetic-mean normalization
/// (natural log). Both entropies zero gives 1; exactly one zero gives 0.
pub fn nmi<A: Eq + Hash, B: Eq + Hash>(labels_a: &[A], labels_b: &[B]) -> Result<f64> {
    if labels_a.len() != labels_b.len() {
        return Err(Error::Invalid(format!(
            "label vectors differ in length: {} vs {}",
            labels_a.len(),
            labels_b.len()
        )));
    }
    if labels_a.is_empty() {
        return Err(Error::Invalid("nmi needs at least one label".into()));
    }
    let n = labels_a.len() as f64;
    let ia = dense_ids(labels_a);
    let ib = dense_ids(labels_b);
    let ka = ia.iter().max().map_or(0, |m| m + 1);
    let kb = ib.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![0usize; ka * kb];
    let mut row = vec![0usize; ka];
    let mut col = vec![0usize; kb];
    for (&a, &b) in ia.iter().zip(&ib) {
        table[a * kb + b] += 1;
        row[a] += 1;
        col[b] += 1;
    }
    let ha = entropy(row.iter().copied(), n);
    let hb = entropy(col.iter().copied(), n);
    if ha == 0.0 && hb == 0.0 {
        return Ok(1.0);
    }
    if ha == 0.0 || hb == 0.0 {
        return Ok(0.0);
    }
    let mut mi = 0.0;
    for a in 0..ka {
        for b in 0..kb {
            let c = table[a * kb + b];
            if c > 0 {
                let c = c as f64;
                mi += c / n * (c * n / (row[a] as f64 * col[b] as f64)).ln();
            }
        }
    }
    Ok((mi.max(0.0) / (0.5 * (ha + hb))).clamp(0.0, 1.0))
}

/// Binary precision / recall / F1 for the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support_negative: usize,
    pub support_positive: usize,
}

pub fn classification_report(pred: &[u8], target: &[u8]) -> Result<ClassificationReport> {
    if pred.len() != target.len() {
        return Err(Error::Invalid(format!(
            "prediction/target lengths differ: {} vs {}",
            pred.len(),
            target.len()
        )));
    }
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&p, &y) in pred.iter().zip(target) {
        match (p == 1, y == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
    let recall = if tp + fn_ > 0 {
        tp as f64 / (tp + fn_) as f64
    } else {
        0.0
    };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    let support_positive = target.iter().filter(|&&y| y == 1).count();
    Ok(ClassificationReport {
        precision,
        recall,
        f1,
        support_negative: target.len() - support_positive,
        support_positive,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(v: &[f64]) -> Tensor2 {
        Tensor2::row_vector(v.to_vec())
    }

    #[test]
    fn micro_f1_cases() {
        let t = row(&[1.0, 0.0, 1.0, 0.0]);
        assert_eq!(micro_f1(&t, &t).unwrap(), 1.0);
        assert_eq!(micro_f1(&t.map(|v| 1.0 - v), &t).unwrap(), 0.0);
        assert_eq!(micro_f1(&row(&[1.0, 1.0, 0.0, 0.0]), &t).unwrap(), 0.5);
        assert_eq!(micro_f1(&row(&[0.0, 0.0]), &row(&[0.0, 0.0])).unwrap(), 1.0);
        assert!(micro_f1(&row(&[0.0]), &row(&[0.0, 1.0])).is_err());
    }

    #[test]
    fn cosine_cases() {
        let a = Tensor2::from_rows(&[vec![0.2, 0.5, 0.0], vec![1.0, 0.0, 0.0]]).unwrap();
        assert!((mean_cosine_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        let b = Tensor2::from_rows(&[vec![0.0, 0.0, 1.0], vec![0.0, 1.0, 0.0]]).unwrap();
        assert_eq!(mean_cosine_similarity(&a, &b).unwrap(), 0.0);
        let v = mean_cosine_similarity(&row(&[1.0, 1.0]), &row(&[1.0, 0.0])).unwrap();
        assert!((v - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert_eq!(
            mean_cosine_similarity(&row(&[0.0, 0.0]), &row(&[1.0, 0.0])).unwrap(),
            0.0
        );
    }

    #[test]
    fn nmi_cases() {
        assert!((nmi(&[0, 0, 1, 1, 2], &[0, 0, 1, 1, 2]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(nmi(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap(), 0.0);
        assert_eq!(nmi(&[3, 3], &["x", "x"]).unwrap(), 1.0);
        assert_eq!(nmi(&[3, 3], &["x", "y"]).unwrap(), 0.0);
        let a = [0, 1, 1, 2, 2, 2, 0];
        let b = [5, 5, 6, 6, 7, 7, 7];
        let relabeled = [9, 9, 1, 1, 4, 4, 4];
        assert_eq!(nmi(&a, &b).unwrap(), nmi(&a, &relabeled).unwrap());
        assert!(nmi(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn report_cases() {
        let r = classification_report(&[1, 0, 1, 0], &[1, 0, 1, 0]).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
        let r = classification_report(&[0, 0, 0], &[1, 0, 1]).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (0.0, 0.0, 0.0));
        let r = classification_report(&[1, 1, 1, 0], &[1, 0, 1, 1]).unwrap();
        for v in [r.precision, r.recall, r.f1] {
            assert!((v - 2.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!((r.support_negative, r.support_positive), (1, 3));
        assert!(classification_report(&[1], &[]).is_err());
    }
}
