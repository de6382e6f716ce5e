//! Objective terms: reconstruction (binary cross-entropy or soft micro-F1),
//! KL divergence to the standard normal prior, and the β-weighted total.

use serde::{Deserialize, Serialize};

use super::config::{BetaSchedule, BetaScheduleKind, LossKind};
use crate::error::{Error, Result};
use crate::linalg::Tensor2;

pub const BCE_CLAMP: f64 = 1e-7;
pub const SOFT_F1_EPS: f64 = 1e-8;

/// Diagonal Gaussian posterior parameters for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentDistribution {
    pub mu: Tensor2,
    pub logvar: Tensor2,
}

impl LatentDistribution {
    pub fn new(mu: Tensor2, logvar: Tensor2) -> Result<Self> {
        mu.check_same_shape(&logvar, "latent_distribution")?;
        Ok(LatentDistribution { mu, logvar })
    }

    pub fn batch_size(&self) -> usize {
        self.mu.rows()
    }

    pub fn latent_dim(&self) -> usize {
        self.mu.cols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VaeLossBreakdown {
    pub recon: f64,
    pub kl: f64,
    pub l1: f64,
    pub beta: f64,
    pub total: f64,
}

/// Batch mean of `KL(N(μ, diag σ²) ‖ N(0, I))`.
pub fn kl_divergence(dist: &LatentDistribution) -> f64 {
    let b = dist.batch_size().max(1) as f64;
    let sum: f64 = dist
        .mu
        .data()
        .iter()
        .zip(dist.logvar.data())
        .map(|(&m, &lv)| kl_term(m, lv))
        .sum();
    sum / b
}

#[inline]
fn kl_term(mu: f64, logvar: f64) -> f64 {
    // −½(1 + lv − μ² − e^lv), rewritten so each piece is non-negative:
    // ½μ² + ½(e^lv − 1 − lv), and e^x − 1 − x ≥ 0.
    0.5 * mu * mu + 0.5 * (logvar.exp_m1() - logvar)
}

/// Gradients of [`kl_divergence`] with respect to μ and log σ².
pub fn kl_gradients(dist: &LatentDistribution) -> (Tensor2, Tensor2) {
    let b = dist.batch_size().max(1) as f64;
    (dist.mu.scale(1.0 / b), dist.logvar.map(|lv| 0.5 * lv.exp_m1() / b))
}

/// Reconstruction loss of `probs` against binary `targets`.
pub fn reconstruction_loss(kind: LossKind, probs: &Tensor2, targets: &Tensor2) -> Result<f64> {
    probs.check_same_shape(targets, "reconstruction_loss")?;
    Ok(match kind {
        LossKind::Bce => bce(probs, targets).0,
        LossKind::SoftF1 => soft_f1(probs, targets).0,
    })
}

/// Loss value and its gradient with respect to `probs`.
pub fn reconstruction_loss_with_grad(kind: LossKind, probs: &Tensor2, targets: &Tensor2) -> Result<(f64, Tensor2)> {
    probs.check_same_shape(targets, "reconstruction_loss")?;
    Ok(match kind {
        LossKind::Bce => bce(probs, targets),
        LossKind::SoftF1 => soft_f1(probs, targets),
    })
}

fn bce(probs: &Tensor2, targets: &Tensor2) -> (f64, Tensor2) {
    let n = probs.len().max(1) as f64;
    let (lo, hi) = (BCE_CLAMP, 1.0 - BCE_CLAMP);
    let mut total = 0.0;
    let mut grad = Tensor2::zeros(probs.rows(), probs.cols());
    for ((g, &p), &y) in grad.data_mut().iter_mut().zip(probs.data()).zip(targets.data()) {
        let q = p.clamp(lo, hi);
        total -= y * q.ln() + (1.0 - y) * (1.0 - q).ln();
        if p > lo && p < hi {
            *g = (-y / q + (1.0 - y) / (1.0 - q)) / n;
        }
    }
    (total / n, grad)
}

/// Micro soft-F1 over the whole batch. With `S = Σp + Σy` (which equals
/// `2TP + FP + FN`), the loss is `1 − (2TP + ε)/(S + ε)`.
fn soft_f1(probs: &Tensor2, targets: &Tensor2) -> (f64, Tensor2) {
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut fnn = 0.0;
    for (&p, &y) in probs.data().iter().zip(targets.data()) {
        tp += p * y;
        fp += p * (1.0 - y);
        fnn += (1.0 - p) * y;
    }
    let num = 2.0 * tp + SOFT_F1_EPS;
    let den = 2.0 * tp + fp + fnn + SOFT_F1_EPS;
    let loss = 1.0 - num / den;
    // ∂num/∂p = 2y, ∂den/∂p = 1.
    let den2 = den * den;
    let grad = targets.map(|y| -(2.0 * y * den - num) / den2);
    (loss, grad)
}

/// Combines the terms as `recon + β·kl + l1`.
pub fn total_loss(recon: f64, kl: f64, l1: f64, beta: f64) -> Result<VaeLossBreakdown> {
    for (name, v) in [("recon", recon), ("kl", kl), ("l1", l1), ("beta", beta)] {
        if !(v >= 0.0) {
            return Err(Error::Invalid(format!("{name} must be non-negative, got {v}")));
        }
    }
    Ok(VaeLossBreakdown {
        recon,
        kl,
        l1,
        beta,
        total: recon + beta * kl + l1,
    })
}

/// β for a 0-based epoch.
pub fn beta_at_epoch(schedule: &BetaSchedule, epoch: usize) -> f64 {
    match schedule.kind {
        BetaScheduleKind::Constant => schedule.beta_max,
        BetaScheduleKind::LinearWarmup => {
            let w = schedule.warmup_epochs.max(1);
            if epoch >= w {
                schedule.beta_max
            } else {
                schedule.beta_max * epoch as f64 / w as f64
            }
        }
    }
}
