use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::linalg::Tensor2;

/// Principal axes of a column-centered data matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `q × d`, orthonormal rows, each row's largest-magnitude entry positive.
    pub components: Tensor2,
    /// Non-increasing eigenvalues of the covariance (1/(n−1) normalization).
    pub explained_variance: Vec<f64>,
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.components.rows()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

fn column_means(x: &Tensor2) -> Vec<f64> {
    let n = x.rows() as f64;
    x.column_sums().into_iter().map(|s| s / n).collect()
}

fn centered(x: &Tensor2, mean: &[f64]) -> Tensor2 {
    let mut c = x.clone();
    for i in 0..c.rows() {
        for (v, m) in c.row_mut(i).iter_mut().zip(mean) {
            *v -= m;
        }
    }
    c
}

/// Sample covariance of the columns of `x`.
pub fn covariance(x: &Tensor2) -> Result<Tensor2> {
    if x.rows() < 2 {
        return Err(Error::Invalid("covariance needs at least 2 rows".into()));
    }
    let c = centered(x, &column_means(x));
    Ok(c.t_matmul(&c)?.scale(1.0 / (x.rows() - 1) as f64))
}

/// Flips `v` so its largest-magnitude entry (first on ties) is positive.
pub(crate) fn canonical_sign(v: &mut [f64]) {
    let mut best = 0usize;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|&x| x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Top-`q` eigenvectors of the covariance of `x`.
pub fn pca_fit(x: &Tensor2, q: usize) -> Result<PcaModel> {
    let (n, d) = x.shape();
    if n < 2 {
        return Err(Error::Invalid(format!("pca needs at least 2 samples, got {n}")));
    }
    if q == 0 || q > (n - 1).min(d) {
        return Err(Error::config(
            "q",
            format!("must lie in [1, {}], got {q}", (n - 1).min(d)),
        ));
    }
    let mean = column_means(x);
    let cov = covariance(x)?;
    let total: f64 = (0..d).map(|j| cov.get(j, j)).sum();
    if !(total > 0.0) {
        return Err(Error::RankDeficient(q));
    }
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(d, d, cov.data()));
    let mut order: Vec<usize> = (0..d).collect();
    // Stable sort keeps index order among equal eigenvalues.
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut components = Tensor2::zeros(q, d);
    let mut explained_variance = Vec::with_capacity(q);
    for (r, &idx) in order.iter().take(q).enumerate() {
        let mut v: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        canonical_sign(&mut v);
        components.row_mut(r).copy_from_slice(&v);
        explained_variance.push(eig.eigenvalues[idx].max(0.0));
    }
    Ok(PcaModel {
        mean,
        components,
        explained_variance,
    })
}

/// `(X − mean) · componentsᵀ`.
pub fn pca_project(model: &PcaModel, x: &Tensor2) -> Result<Tensor2> {
    if x.cols() != model.dim() {
        return Err(Error::ShapeMismatch {
            op: "pca_project",
            left: x.shape(),
            right: (x.rows(), model.dim()),
        });
    }
    centered(x, &model.mean).matmul_t(&model.components)
}

/// Maps projections back to the input space: `proj · components + mean`.
pub fn pca_reconstruct(model: &PcaModel, proj: &Tensor2) -> Result<Tensor2> {
    let mut out = proj.matmul(&model.components)?;
    let mean = Tensor2::row_vector(model.mean.clone());
    out.add_row_broadcast(&mean)?;
    Ok(out)
}
