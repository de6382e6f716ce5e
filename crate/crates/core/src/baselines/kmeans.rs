use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::Tensor2;
use crate::rng::{indexed_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KmeansConfig {
    pub k: usize,
    pub seed: u64,
    pub restarts: usize,
    pub max_iters: usize,
    pub rel_tol: f64,
}

impl KmeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        KmeansConfig {
            k,
            seed,
            restarts: 10,
            max_iters: 300,
            rel_tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KmeansResult {
    pub centroids: Tensor2,
    pub labels: Vec<usize>,
    /// Sum of squared distances from each point to its centroid.
    pub inertia: f64,
    pub iterations: usize,
    /// Inertia after every Lloyd iteration of the winning restart.
    pub inertia_history: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid and its squared distance; ties go to the lower index.
fn nearest(point: &[f64], centroids: &Tensor2) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..centroids.rows() {
        let d = sq_dist(point, centroids.row(c));
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans_pp_seed(points: &Tensor2, k: usize, rng: &mut impl Rng) -> Tensor2 {
    let n = points.rows();
    let mut centroids = Tensor2::zeros(k, points.cols());
    let first = rng.random_range(0..n);
    centroids.row_mut(0).copy_from_slice(points.row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), points.row(first))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if acc > target && d > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).copy_from_slice(points.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(i), points.row(pick)));
        }
    }
    centroids
}

fn update_centroids(points: &Tensor2, labels: &[usize], k: usize) -> (Tensor2, Vec<usize>) {
    let mut sums = Tensor2::zeros(k, points.cols());
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for (s, v) in sums.row_mut(l).iter_mut().zip(points.row(i)) {
            *s += v;
        }
    }
    for (c, &count) in counts.iter().enumerate() {
        if count > 0 {
            sums.row_mut(c).iter_mut().for_each(|s| *s /= count as f64);
        }
    }
    (sums, counts)
}

fn inertia_of(points: &Tensor2, centroids: &Tensor2, labels: &[usize]) -> f64 {
    labels
        .iter()
        .enumerate()
        .map(|(i, &l)| sq_dist(points.row(i), centroids.row(l)))
        .sum()
}

fn lloyd(points: &Tensor2, config: &KmeansConfig, restart: usize) -> KmeansResult {
    let n = points.rows();
    let k = config.k;
    let mut rng = indexed_rng(config.seed, Stream::Kmeans, restart as u64);
    let mut centroids = kmeans_pp_seed(points, k, &mut rng);
    let mut labels = vec![0usize; n];
    let mut history = Vec::new();
    let mut prev = f64::INFINITY;
    let mut iterations = 0;
    for _ in 0..config.max_iters {
        iterations += 1;
        for (i, l) in labels.iter_mut().enumerate() {
            *l = nearest(points.row(i), &centroids).0;
        }
        let (mut next, mut counts) = update_centroids(points, &labels, k);
        // An empty cluster takes over the point farthest from its centroid.
        while let Some(empty) = counts.iter().position(|&c| c == 0) {
            let far = (0..n)
                .map(|i| (i, sq_dist(points.row(i), next.row(labels[i]))))
                .fold((0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best })
                .0;
            labels[far] = empty;
            (next, counts) = update_centroids(points, &labels, k);
        }
        centroids = next;
        let inertia = inertia_of(points, &centroids, &labels);
        history.push(inertia);
        let converged = prev.is_finite() && (prev - inertia) / prev.max(1e-12) < config.rel_tol;
        prev = inertia;
        if converged {
            break;
        }
    }
    KmeansResult {
        centroids,
        labels,
        inertia: prev,
        iterations,
        inertia_history: history,
    }
}

/// Lloyd's algorithm with k-means++ seeding; returns the lowest-inertia
/// restart (earliest restart on ties).
pub fn kmeans_cluster(points: &Tensor2, config: &KmeansConfig) -> Result<KmeansResult> {
    let n = points.rows();
    if config.k == 0 || config.k > n {
        return Err(Error::config("k", format!("must lie in [1, {n}], got {}", config.k)));
    }
    if config.restarts == 0 {
        return Err(Error::config("restarts", "must be positive"));
    }
    if config.max_iters == 0 {
        return Err(Error::config("max_iters", "must be positive"));
    }
    if !points.all_finite() {
        return Err(Error::NonFinite {
            context: "kmeans input".into(),
        });
    }
    let runs: Vec<KmeansResult> = (0..config.restarts)
        .into_par_iter()
        .map(|r| lloyd(points, config, r))
        .collect();
    Ok(runs
        .into_iter()
        .reduce(|best, r| if r.inertia < best.inertia { r } else { best })
        .expect("at least one restart"))
}
