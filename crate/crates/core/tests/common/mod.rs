//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use std::collections::HashMap;

use mutvae::linalg::Tensor2;

/// Eigen-pairs of a symmetric matrix by cyclic Jacobi rotations, sorted by
/// descending eigenvalue. Eigenvectors are returned as rows.
pub fn jacobi_eigen(a: &Tensor2) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.rows();
    let mut m: Vec<Vec<f64>> = (0..n).map(|i| a.row(i).to_vec()).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect())
        .collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| m[b][b].total_cmp(&m[a][a]));
    let values = order.iter().map(|&i| m[i][i]).collect();
    let vectors = order.iter().map(|&i| (0..n).map(|r| v[r][i]).collect()).collect();
    (values, vectors)
}

/// Sample covariance (n − 1 normalization) computed entry by entry.
pub fn covariance(x: &Tensor2) -> Tensor2 {
    let (n, d) = x.shape();
    let mean: Vec<f64> = (0..d)
        .map(|j| (0..n).map(|i| x.get(i, j)).sum::<f64>() / n as f64)
        .collect();
    Tensor2::from_fn(d, d, |a, b| {
        (0..n)
            .map(|i| (x.get(i, a) - mean[a]) * (x.get(i, b) - mean[b]))
            .sum::<f64>()
            / (n - 1) as f64
    })
}

/// Lowest within-cluster sum of squares over every 2-partition of the rows.
pub fn brute_force_two_means(x: &Tensor2) -> f64 {
    let n = x.rows();
    assert!((2..=20).contains(&n));
    let sse = |members: &[usize]| -> f64 {
        let d = x.cols();
        let mut mean = vec![0.0; d];
        for &i in members {
            for (m, v) in mean.iter_mut().zip(x.row(i)) {
                *m += v / members.len() as f64;
            }
        }
        members
            .iter()
            .map(|&i| x.row(i).iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .sum()
    };
    let mut best = f64::INFINITY;
    // Point 0 always sits in the first group; the second group is non-empty.
    for mask in 1u32..(1 << (n - 1)) {
        let (mut a, mut b) = (vec![0usize], Vec::new());
        for i in 1..n {
            if mask & (1 << (i - 1)) != 0 {
                b.push(i);
            } else {
                a.push(i);
            }
        }
        best = best.min(sse(&a) + sse(&b));
    }
    best
}

fn entropy_bits<K: std::hash::Hash + Eq>(items: impl Iterator<Item = K>, n: f64) -> f64 {
    let mut counts: HashMap<K, usize> = HashMap::new();
    for k in items {
        *counts.entry(k).or_default() += 1;
    }
    counts.values().map(|&c| c as f64 / n).map(|p| -p * p.log2()).sum()
}

/// NMI through `I = H(A) + H(B) − H(A,B)` in bits, arithmetic normalization.
pub fn nmi_oracle(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len() as f64;
    let ha = entropy_bits(a.iter(), n);
    let hb = entropy_bits(b.iter(), n);
    let hab = entropy_bits(a.iter().zip(b), n);
    if ha == 0.0 && hb == 0.0 {
        return 1.0;
    }
    if ha == 0.0 || hb == 0.0 {
        return 0.0;
    }
    (ha + hb - hab) / ((ha + hb) / 2.0)
}

/// Monte Carlo estimate of `E_q[log q(z) − log p(z)]` for one diagonal
/// Gaussian row against the standard normal prior.
pub fn kl_monte_carlo(mu: &[f64], logvar: &[f64], samples: usize, rng: &mut impl rand::Rng) -> f64 {
    use rand_distr::{Distribution, StandardNormal};
    let mut total = 0.0;
    for _ in 0..samples {
        let mut log_ratio = 0.0;
        for (&m, &lv) in mu.iter().zip(logvar) {
            let sigma = (0.5 * lv).exp();
            let e: f64 = StandardNormal.sample(rng);
            let z = m + sigma * e;
            // log q − log p; the 0.5·ln(2π) terms cancel.
            log_ratio += -0.5 * lv - 0.5 * e * e + 0.5 * z * z;
        }
        total += log_ratio;
    }
    total / samples as f64
}
