use serde::{Deserialize, Serialize};

use super::{classification_report, ClassificationReport};
use crate::error::{Error, Result};
use crate::linalg::{sigmoid, Tensor2};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeConfig {
    pub l2: f64,
    pub learning_rate: f64,
    pub iterations: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            l2: 1e-3,
            learning_rate: 0.1,
            iterations: 500,
        }
    }
}

/// Binary logistic-regression probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub l2_coefficient: f64,
}

impl ProbeModel {
    pub fn scores(&self, x: &Tensor2) -> Result<Vec<f64>> {
        if x.cols() != self.weights.len() {
            return Err(Error::ShapeMismatch {
                op: "probe",
                left: x.shape(),
                right: (x.rows(), self.weights.len()),
            });
        }
        Ok((0..x.rows())
            .map(|i| sigmoid(dot(x.row(i), &self.weights) + self.bias))
            .collect())
    }

    pub fn predict(&self, x: &Tensor2) -> Result<Vec<u8>> {
        Ok(self.scores(x)?.into_iter().map(|s| u8::from(s >= 0.5)).collect())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mean logistic loss plus `(l2/2)‖w‖²`, with gradients for `w` and `b`.
pub fn probe_objective(x: &Tensor2, y: &[u8], weights: &[f64], bias: f64, l2: f64) -> (f64, Vec<f64>, f64) {
    let n = x.rows() as f64;
    let mut loss = 0.0;
    let mut gw = vec![0.0; weights.len()];
    let mut gb = 0.0;
    for (i, &yi) in y.iter().enumerate() {
        let row = x.row(i);
        let s = dot(row, weights) + bias;
        let yf = f64::from(yi);
        // log(1 + e^s) − y·s, evaluated stably.
        loss += s.max(0.0) + (-s.abs()).exp().ln_1p() - yf * s;
        let r = sigmoid(s) - yf;
        for (g, &v) in gw.iter_mut().zip(row) {
            *g += r * v;
        }
        gb += r;
    }
    let reg: f64 = weights.iter().map(|w| w * w).sum::<f64>() * 0.5 * l2;
    for (g, &w) in gw.iter_mut().zip(weights) {
        *g = *g / n + l2 * w;
    }
    (loss / n + reg, gw, gb / n)
}

/// Full-batch gradient descent from zero.
pub fn fit_probe(x: &Tensor2, y: &[u8], config: &ProbeConfig) -> Result<ProbeModel> {
    if x.rows() != y.len() {
        return Err(Error::Invalid(format!("{} rows but {} labels", x.rows(), y.len())));
    }
    if let Some(&bad) = y.iter().find(|&&v| v > 1) {
        return Err(Error::Invalid(format!("probe label {bad} is not binary")));
    }
    let positives = y.iter().filter(|&&v| v == 1).count();
    if positives == 0 || positives == y.len() {
        return Err(Error::DegenerateLabels);
    }
    let mut weights = vec![0.0; x.cols()];
    let mut bias = 0.0;
    for _ in 0..config.iterations {
        let (_, gw, gb) = probe_objective(x, y, &weights, bias, config.l2);
        for (w, g) in weights.iter_mut().zip(&gw) {
            *w -= config.learning_rate * g;
        }
        bias -= config.learning_rate * gb;
    }
    if !(weights.iter().all(|w| w.is_finite()) && bias.is_finite()) {
        return Err(Error::NonFinite {
            context: "probe fit".into(),
        });
    }
    Ok(ProbeModel {
        weights,
        bias,
        l2_coefficient: config.l2,
    })
}

/// Thresholds probe scores at 0.5 and scores them against `y`.
pub fn eval_probe(model: &ProbeModel, x: &Tensor2, y: &[u8]) -> Result<ClassificationReport> {
    classification_report(&model.predict(x)?, y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn separable() -> (Tensor2, Vec<u8>) {
        let x = Tensor2::from_rows(&[
            vec![2.0, 1.0],
            vec![1.5, 2.0],
            vec![3.0, 0.5],
            vec![-1.0, -2.0],
            vec![-2.5, -0.5],
            vec![-1.5, -1.0],
        ])
        .unwrap();
        (x, vec![1, 1, 1, 0, 0, 0])
    }

    #[test]
    fn separable_data_is_fit_exactly() {
        let (x, y) = separable();
        let m = fit_probe(&x, &y, &ProbeConfig::default()).unwrap();
        assert_eq!(eval_probe(&m, &x, &y).unwrap().f1, 1.0);
    }

    #[test]
    fn heavy_l2_shrinks_weights() {
        let (x, y) = separable();
        let light = fit_probe(&x, &y, &ProbeConfig::default()).unwrap();
        // The step must respect the curvature l2 adds.
        let heavy = fit_probe(
            &x,
            &y,
            &ProbeConfig {
                l2: 1e6,
                learning_rate: 1e-6,
                iterations: 500,
            },
        )
        .unwrap();
        let norm = |m: &ProbeModel| m.weights.iter().map(|w| w * w).sum::<f64>().sqrt();
        assert!(norm(&heavy) < 1e-5);
        assert!(norm(&light) > 1.0);
        // Balanced labels: the scores sit on the 0.5 boundary.
        for s in heavy.scores(&x).unwrap() {
            assert!((s - 0.5).abs() < 1e-5);
        }
    }

    #[test]
    fn degenerate_labels_rejected() {
        let (x, _) = separable();
        assert!(matches!(
            fit_probe(&x, &[1; 6], &ProbeConfig::default()),
            Err(Error::DegenerateLabels)
        ));
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let x = Tensor2::from_rows(&[
            vec![0.5, -1.0, 2.0],
            vec![1.0, 0.0, -0.5],
            vec![-0.3, 0.8, 0.1],
            vec![2.0, 1.0, 1.0],
            vec![0.0, -2.0, 0.4],
        ])
        .unwrap();
        let y = [1, 0, 1, 1, 0];
        let w = [0.3, -0.2, 0.5];
        let b = 0.1;
        let l2 = 0.05;
        let (_, gw, gb) = probe_objective(&x, &y, &w, b, l2);
        let h = 1e-6;
        for k in 0..3 {
            let mut wp = w;
            wp[k] += h;
            let mut wm = w;
            wm[k] -= h;
            let fd = (probe_objective(&x, &y, &wp, b, l2).0 - probe_objective(&x, &y, &wm, b, l2).0) / (2.0 * h);
            assert!((fd - gw[k]).abs() < 1e-6);
        }
        let fd = (probe_objective(&x, &y, &w, b + h, l2).0 - probe_objective(&x, &y, &w, b - h, l2).0) / (2.0 * h);
        assert!((fd - gb).abs() < 1e-6);
    }
}
