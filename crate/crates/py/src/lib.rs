//! Python bindings for `mutvae`.
//!
//! Matrices cross the boundary as lists of rows. Errors from the core crate
//! surface as `OSError` when a file is involved and `ValueError` otherwise.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use mutvae::baselines::{kmeans_cluster, pca_fit, pca_project, KmeansConfig};
use mutvae::dataio::{
    filter_low_frequency, generate_synthetic_cohort, holdout_split, ingest_profiles, read_cohort_cache,
    write_cohort_cache, SyntheticSpec,
};
use mutvae::linalg::Tensor2;
use mutvae::metrics::{eval_probe, fit_probe, ProbeConfig};
use mutvae::vae::{
    embed, evaluate_reconstruction, load_checkpoint, save_checkpoint, train, LossKind, OptimizerState, TrainHistory,
};

fn to_py(err: mutvae::Error) -> PyErr {
    match err {
        mutvae::Error::Io { .. } | mutvae::Error::InFile { .. } => PyIOError::new_err(err.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn tensor(rows: Vec<Vec<f64>>) -> PyResult<Tensor2> {
    Tensor2::from_rows(&rows).map_err(to_py)
}

fn rows(t: &Tensor2) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

/// A binary sample × locus matrix with optional per-sample labels.
#[pyclass(module = "pymutvae", frozen)]
pub struct Cohort {
    inner: mutvae::dataio::Cohort,
}

#[pymethods]
impl Cohort {
    #[staticmethod]
    #[pyo3(signature = (n_samples=600, n_loci=2000, n_clusters=6, background_rate=0.01, enriched_rate=0.35,
                        enriched_loci_per_cluster=40, seed=7))]
    fn synthetic(
        n_samples: usize,
        n_loci: usize,
        n_clusters: usize,
        background_rate: f64,
        enriched_rate: f64,
        enriched_loci_per_cluster: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let spec = SyntheticSpec {
            n_samples,
            n_loci,
            n_clusters,
            background_rate,
            enriched_rate,
            enriched_loci_per_cluster,
            seed,
        };
        let inner = generate_synthetic_cohort(&spec).map_err(to_py)?;
        Ok(Cohort { inner })
    }

    /// Reads a two-column `sample_id<TAB>locus_id` mutation list.
    #[staticmethod]
    #[pyo3(signature = (path, labels=None))]
    fn from_profiles(path: PathBuf, labels: Option<PathBuf>) -> PyResult<Self> {
        let open = |p: &PathBuf| {
            File::open(p)
                .map(BufReader::new)
                .map_err(|e| PyIOError::new_err(format!("{}: {e}", p.display())))
        };
        let profiles = open(&path)?;
        let labels = labels.as_ref().map(open).transpose()?;
        let inner = ingest_profiles(profiles, labels).map_err(|e| to_py(mutvae::Error::in_file(&path, e)))?;
        Ok(Cohort { inner })
    }

    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        let inner = read_cohort_cache(&dir).map_err(to_py)?;
        Ok(Cohort { inner })
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        write_cohort_cache(&self.inner, &dir).map_err(to_py)
    }

    /// Drops loci mutated in fewer than `min_count` samples.
    #[pyo3(signature = (min_count=5))]
    fn filter(&self, min_count: usize) -> PyResult<Self> {
        let (inner, _) = filter_low_frequency(&self.inner, min_count).map_err(to_py)?;
        Ok(Cohort { inner })
    }

    #[getter]
    fn n_samples(&self) -> usize {
        self.inner.n_samples()
    }

    #[getter]
    fn n_loci(&self) -> usize {
        self.inner.n_loci()
    }

    #[getter]
    fn sample_ids(&self) -> Vec<String> {
        self.inner.sample_ids().to_vec()
    }

    #[getter]
    fn locus_ids(&self) -> Vec<String> {
        self.inner.locus_ids().to_vec()
    }

    /// Labels in sample order, `None` when the cohort is unlabelled.
    #[getter]
    fn labels(&self) -> Option<Vec<Option<String>>> {
        self.inner.labels()?;
        Some(
            self.inner
                .label_vector()
                .into_iter()
                .map(|l| l.map(str::to_string))
                .collect(),
        )
    }

    fn matrix(&self) -> Vec<Vec<u8>> {
        (0..self.inner.n_samples())
            .map(|i| self.inner.matrix().row(i).to_vec())
            .collect()
    }

    fn __len__(&self) -> usize {
        self.inner.n_samples()
    }

    fn __repr__(&self) -> String {
        format!(
            "Cohort(samples={}, loci={}, mutations={})",
            self.inner.n_samples(),
            self.inner.n_loci(),
            self.inner.matrix().ones()
        )
    }
}

/// Model architecture and training hyperparameters.
#[pyclass(module = "pymutvae", frozen)]
pub struct VaeConfig {
    inner: mutvae::vae::VaeConfig,
}

#[pymethods]
impl VaeConfig {
    #[new]
    #[pyo3(signature = (input_dim, hidden_dims=(1024, 256), latent_dim=64, loss="soft_f1", beta_max=1.0,
                        warmup_epochs=25, learning_rate=1e-3, batch_size=128, epochs=100, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        input_dim: usize,
        hidden_dims: (usize, usize),
        latent_dim: usize,
        loss: &str,
        beta_max: f64,
        warmup_epochs: usize,
        learning_rate: f64,
        batch_size: usize,
        epochs: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let mut c = mutvae::vae::VaeConfig::new(input_dim);
        c.hidden_dims = [hidden_dims.0, hidden_dims.1];
        c.latent_dim = latent_dim;
        c.loss_kind = parse_loss(loss)?;
        c.beta_schedule.beta_max = beta_max;
        c.beta_schedule.warmup_epochs = warmup_epochs;
        c.optimizer.learning_rate = learning_rate;
        c.batch_size = batch_size;
        c.epochs = epochs;
        c.seed = seed;
        c.validate().map_err(to_py)?;
        Ok(VaeConfig { inner: c })
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.input_dim
    }

    #[getter]
    fn latent_dim(&self) -> usize {
        self.inner.latent_dim
    }

    #[getter]
    fn epochs(&self) -> usize {
        self.inner.epochs
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn loss(&self) -> String {
        self.inner.loss_kind.to_string()
    }

    fn to_json(&self) -> String {
        self.inner.to_canonical_json()
    }

    fn __repr__(&self) -> String {
        format!("VaeConfig({})", self.inner.to_canonical_json())
    }
}

fn parse_loss(name: &str) -> PyResult<LossKind> {
    match name {
        "soft_f1" => Ok(LossKind::SoftF1),
        "bce" => Ok(LossKind::Bce),
        other => Err(PyValueError::new_err(format!(
            "unknown loss {other:?}, expected soft_f1 or bce"
        ))),
    }
}

fn history_rows(history: &TrainHistory) -> Vec<BTreeMap<&'static str, f64>> {
    history
        .records
        .iter()
        .map(|r| {
            BTreeMap::from([
                ("epoch", r.epoch as f64),
                ("recon", r.loss.recon),
                ("kl", r.loss.kl),
                ("l1", r.loss.l1),
                ("beta", r.loss.beta),
                ("total", r.loss.total),
                ("val_micro_f1", r.val_micro_f1),
                ("val_cosine", r.val_cosine),
            ])
        })
        .collect()
}

/// A trained VAE. `history` is empty for models loaded from a checkpoint.
#[pyclass(module = "pymutvae", frozen)]
pub struct Model {
    model: mutvae::vae::VaeModel,
    optimizer: Option<OptimizerState>,
    history: TrainHistory,
    epoch: u64,
}

#[pymethods]
impl Model {
    /// Trains on a seeded holdout split of `cohort`.
    #[staticmethod]
    #[pyo3(signature = (cohort, config, train_fraction=0.8, split_seed=0))]
    fn train(
        py: Python<'_>,
        cohort: &Cohort,
        config: &VaeConfig,
        train_fraction: f64,
        split_seed: u64,
    ) -> PyResult<Self> {
        let split = holdout_split(cohort.inner.n_samples(), train_fraction, split_seed).map_err(to_py)?;
        let outcome = py
            .detach(|| train(&cohort.inner, &split, &config.inner))
            .map_err(to_py)?;
        Ok(Model {
            epoch: outcome.history.len() as u64,
            model: outcome.model,
            optimizer: Some(outcome.optimizer),
            history: outcome.history,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ckpt = load_checkpoint(&path).map_err(to_py)?;
        Ok(Model {
            model: ckpt.model,
            optimizer: ckpt.optimizer,
            history: TrainHistory::default(),
            epoch: ckpt.epoch,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(&self.model, self.optimizer.as_ref(), self.epoch, &path).map_err(to_py)
    }

    #[getter]
    fn config(&self) -> VaeConfig {
        VaeConfig {
            inner: self.model.config().clone(),
        }
    }

    #[getter]
    fn history(&self) -> Vec<BTreeMap<&'static str, f64>> {
        history_rows(&self.history)
    }

    /// Posterior means, one row per sample.
    fn embed(&self, cohort: &Cohort) -> PyResult<Vec<Vec<f64>>> {
        embed(&self.model, &cohort.inner).map(|z| rows(&z)).map_err(to_py)
    }

    /// Decoder probabilities for raw 0/1 rows.
    fn reconstruct(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        self.model.reconstruct(&tensor(x)?).map(|p| rows(&p)).map_err(to_py)
    }

    /// Micro-F1 and mean cosine similarity over every sample of `cohort`.
    fn evaluate(&self, cohort: &Cohort) -> PyResult<BTreeMap<&'static str, f64>> {
        let all: Vec<usize> = (0..cohort.inner.n_samples()).collect();
        let m = evaluate_reconstruction(&self.model, &cohort.inner, &all).map_err(to_py)?;
        Ok(BTreeMap::from([
            ("micro_f1", m.micro_f1),
            ("mean_cosine", m.mean_cosine),
        ]))
    }
}

/// Projects `points` onto their top `q` principal components.
#[pyfunction]
fn pca(points: Vec<Vec<f64>>, q: usize) -> PyResult<Vec<Vec<f64>>> {
    let x = tensor(points)?;
    let model = pca_fit(&x, q).map_err(to_py)?;
    pca_project(&model, &x).map(|p| rows(&p)).map_err(to_py)
}

/// Returns `(labels, inertia)` of the best of `restarts` k-means++ runs.
#[pyfunction]
#[pyo3(signature = (points, k, seed=0, restarts=10))]
fn kmeans(points: Vec<Vec<f64>>, k: usize, seed: u64, restarts: usize) -> PyResult<(Vec<usize>, f64)> {
    let config = KmeansConfig {
        restarts,
        ..KmeansConfig::new(k, seed)
    };
    let r = kmeans_cluster(&tensor(points)?, &config).map_err(to_py)?;
    Ok((r.labels, r.inertia))
}

/// Normalized mutual information of two labelings given as strings.
#[pyfunction]
fn nmi(a: Vec<String>, b: Vec<String>) -> PyResult<f64> {
    mutvae::metrics::nmi(&a, &b).map_err(to_py)
}

#[pyfunction]
fn micro_f1(pred: Vec<Vec<f64>>, target: Vec<Vec<f64>>) -> PyResult<f64> {
    mutvae::metrics::micro_f1(&tensor(pred)?, &tensor(target)?).map_err(to_py)
}

/// Fits a logistic probe on a seeded holdout split and scores the held-out rows.
#[pyfunction]
#[pyo3(signature = (x, y, train_fraction=0.8, seed=0))]
fn probe(x: Vec<Vec<f64>>, y: Vec<u8>, train_fraction: f64, seed: u64) -> PyResult<BTreeMap<&'static str, f64>> {
    let x = tensor(x)?;
    if y.len() != x.rows() {
        return Err(PyValueError::new_err(format!(
            "{} labels for {} rows",
            y.len(),
            x.rows()
        )));
    }
    let split = holdout_split(x.rows(), train_fraction, seed).map_err(to_py)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| y[i]).collect::<Vec<u8>>();
    let model = fit_probe(
        &x.select_rows(&split.train_indices),
        &pick(&split.train_indices),
        &ProbeConfig::default(),
    )
    .map_err(to_py)?;
    let r = eval_probe(&model, &x.select_rows(&split.val_indices), &pick(&split.val_indices)).map_err(to_py)?;
    Ok(BTreeMap::from([
        ("precision", r.precision),
        ("recall", r.recall),
        ("f1", r.f1),
    ]))
}

/// Runs the command-line interface with `args` (without the program name)
/// and returns its exit code.
#[pyfunction]
fn run_cli(py: Python<'_>, args: Vec<String>) -> i32 {
    let argv: Vec<String> = std::iter::once("mutvae".to_string()).chain(args).collect();
    py.detach(|| mutvae::cli::run(argv))
}

#[pymodule]
pub fn pymutvae(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Cohort>()?;
    m.add_class::<VaeConfig>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(pca, m)?)?;
    m.add_function(wrap_pyfunction!(kmeans, m)?)?;
    m.add_function(wrap_pyfunction!(nmi, m)?)?;
    m.add_function(wrap_pyfunction!(micro_f1, m)?)?;
    m.add_function(wrap_pyfunction!(probe, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
