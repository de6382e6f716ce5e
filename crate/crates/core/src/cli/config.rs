use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::baselines::KmeansConfig;
use crate::dataio::SyntheticSpec;
use crate::error::{Error, Result};
use crate::metrics::ProbeConfig;
use crate::vae::{BetaSchedule, BetaScheduleKind, LossKind, OptimizerConfig, VaeConfig};

/// Every setting of a run, flat so that each key doubles as a `--key value`
/// flag. Paths left unset are simply absent from the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    pub profiles: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub cohort: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub embedding: Option<PathBuf>,
    pub clusters: Option<PathBuf>,
    pub seed: u64,

    pub n_samples: usize,
    pub n_loci: usize,
    pub n_clusters: usize,
    pub background_rate: f64,
    pub enriched_rate: f64,
    pub enriched_loci_per_cluster: usize,

    pub min_count: usize,

    pub hidden_dims: Vec<usize>,
    pub latent_dim: usize,
    pub dropout_rate: f64,
    pub l1_coefficient: f64,
    pub leaky_slope: f64,
    pub bn_epsilon: f64,
    pub bn_momentum: f64,
    pub loss_kind: LossKind,
    pub beta_schedule: BetaScheduleKind,
    pub beta_max: f64,
    pub warmup_epochs: usize,
    pub learning_rate: f64,
    pub rho: f64,
    pub optimizer_epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub train_fraction: f64,

    pub k: usize,
    pub pca: usize,
    pub kmeans_restarts: usize,
    pub kmeans_max_iters: usize,
    pub kmeans_tol: f64,

    pub probe_l2: f64,
    pub probe_learning_rate: f64,
    pub probe_iterations: usize,

    pub latent_sizes: Vec<usize>,
    pub folds: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let vae = VaeConfig::new(1);
        let probe = ProbeConfig::default();
        let kmeans = KmeansConfig::new(1, 0);
        RunConfig {
            out_dir: PathBuf::from("run"),
            profiles: None,
            labels: None,
            cohort: None,
            checkpoint: None,
            embedding: None,
            clusters: None,
            seed: 0,
            n_samples: 600,
            n_loci: 2000,
            n_clusters: 6,
            background_rate: 0.01,
            enriched_rate: 0.35,
            enriched_loci_per_cluster: 40,
            min_count: 5,
            hidden_dims: vae.hidden_dims.to_vec(),
            latent_dim: vae.latent_dim,
            dropout_rate: vae.dropout_rate,
            l1_coefficient: vae.l1_coefficient,
            leaky_slope: vae.leaky_slope,
            bn_epsilon: vae.bn_epsilon,
            bn_momentum: vae.bn_momentum,
            loss_kind: vae.loss_kind,
            beta_schedule: vae.beta_schedule.kind,
            beta_max: vae.beta_schedule.beta_max,
            warmup_epochs: vae.beta_schedule.warmup_epochs,
            learning_rate: vae.optimizer.learning_rate,
            rho: vae.optimizer.rho,
            optimizer_epsilon: vae.optimizer.epsilon,
            batch_size: vae.batch_size,
            epochs: vae.epochs,
            train_fraction: 0.8,
            k: 0,
            pca: 0,
            kmeans_restarts: kmeans.restarts,
            kmeans_max_iters: kmeans.max_iters,
            kmeans_tol: kmeans.rel_tol,
            probe_l2: probe.l2,
            probe_learning_rate: probe.learning_rate,
            probe_iterations: probe.iterations,
            latent_sizes: vec![2, 8, 16, 32],
            folds: 5,
        }
    }
}

/// Help text for every config key, in declaration order.
pub const KEY_HELP: &[(&str, &str)] = &[
    ("out_dir", "directory receiving outputs and the effective config"),
    ("profiles", "mutation TSV with header sample_id<TAB>locus_id"),
    ("labels", "label TSV with header sample_id<TAB>label"),
    ("cohort", "cohort cache directory written by preprocess"),
    ("checkpoint", "model checkpoint written by train"),
    ("embedding", "embedding TSV written by embed"),
    ("clusters", "cluster TSV written by eval-cluster"),
    ("seed", "master seed for every random stream"),
    ("n_samples", "synth: number of samples"),
    ("n_loci", "synth: number of loci"),
    ("n_clusters", "synth: number of planted clusters"),
    ("background_rate", "synth: mutation probability outside enriched loci"),
    ("enriched_rate", "synth: mutation probability at enriched loci"),
    ("enriched_loci_per_cluster", "synth: enriched loci per cluster"),
    (
        "min_count",
        "preprocess: keep loci mutated in at least this many samples",
    ),
    ("hidden_dims", "two hidden widths, e.g. 1024,256"),
    ("latent_dim", "latent size"),
    ("dropout_rate", "dropout probability"),
    ("l1_coefficient", "L1 penalty on dense weights"),
    ("leaky_slope", "negative slope of the encoder LeakyReLU"),
    ("bn_epsilon", "batch-norm epsilon"),
    ("bn_momentum", "batch-norm running-stat momentum"),
    ("loss_kind", "reconstruction loss: soft_f1 or bce"),
    ("beta_schedule", "constant or linear_warmup"),
    ("beta_max", "final KL weight"),
    ("warmup_epochs", "epochs to reach beta_max"),
    ("learning_rate", "RMSprop learning rate"),
    ("rho", "RMSprop decay"),
    ("optimizer_epsilon", "RMSprop epsilon"),
    ("batch_size", "mini-batch size"),
    ("epochs", "training epochs"),
    ("train_fraction", "fraction of samples used for training"),
    ("k", "eval-cluster/plot-data: clusters (0 = number of distinct labels)"),
    (
        "pca",
        "eval-cluster: cluster q-dimensional PCA projections of the cohort instead",
    ),
    ("kmeans_restarts", "k-means restarts"),
    ("kmeans_max_iters", "k-means iteration cap per restart"),
    ("kmeans_tol", "k-means relative inertia tolerance"),
    ("probe_l2", "probe L2 coefficient"),
    ("probe_learning_rate", "probe gradient-descent step"),
    ("probe_iterations", "probe gradient-descent iterations"),
    ("latent_sizes", "sweep-latent: comma-separated latent sizes"),
    ("folds", "sweep-latent: cross-validation folds"),
];

/// Subcommands, in the order shown by `--help`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subcommand {
    Synth,
    Preprocess,
    Train,
    Embed,
    EvalRecon,
    EvalCluster,
    Probe,
    SweepLatent,
    PlotData,
}

impl Subcommand {
    pub const ALL: [Subcommand; 9] = [
        Subcommand::Synth,
        Subcommand::Preprocess,
        Subcommand::Train,
        Subcommand::Embed,
        Subcommand::EvalRecon,
        Subcommand::EvalCluster,
        Subcommand::Probe,
        Subcommand::SweepLatent,
        Subcommand::PlotData,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Synth => "synth",
            Subcommand::Preprocess => "preprocess",
            Subcommand::Train => "train",
            Subcommand::Embed => "embed",
            Subcommand::EvalRecon => "eval-recon",
            Subcommand::EvalCluster => "eval-cluster",
            Subcommand::Probe => "probe",
            Subcommand::SweepLatent => "sweep-latent",
            Subcommand::PlotData => "plot-data",
        }
    }

    pub fn about(self) -> &'static str {
        match self {
            Subcommand::Synth => "generate a synthetic cohort with planted clusters",
            Subcommand::Preprocess => "ingest mutations, drop rare loci, write a cohort cache",
            Subcommand::Train => "train a VAE and write a checkpoint plus history",
            Subcommand::Embed => "export latent means for every sample",
            Subcommand::EvalRecon => "reconstruction micro-F1 and cosine similarity",
            Subcommand::EvalCluster => "k-means on embeddings (or PCA) scored by NMI",
            Subcommand::Probe => "logistic-regression probe on embeddings or raw profiles",
            Subcommand::SweepLatent => "cross-validated micro-F1 for several latent sizes",
            Subcommand::PlotData => "scatter TSV for 2-D embeddings",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }
}

/// The config with every optional path filled in, serialized; it tells the
/// override parser the value type behind each key.
fn type_template() -> Table {
    let placeholder = Some(PathBuf::new());
    let full = RunConfig {
        profiles: placeholder.clone(),
        labels: placeholder.clone(),
        cohort: placeholder.clone(),
        checkpoint: placeholder.clone(),
        embedding: placeholder.clone(),
        clusters: placeholder,
        ..RunConfig::default()
    };
    Table::try_from(&full).expect("run config serializes")
}

fn parse_override(key: &str, raw: &str, template: &Value) -> Result<Value> {
    let bad = || Error::config(key, format!("cannot parse {raw:?}"));
    Ok(match template {
        Value::Integer(_) => Value::Integer(raw.trim().parse().map_err(|_| bad())?),
        Value::Float(_) => Value::Float(raw.trim().parse().map_err(|_| bad())?),
        Value::Boolean(_) => Value::Boolean(raw.trim().parse().map_err(|_| bad())?),
        Value::Array(_) => Value::Array(
            raw.split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| s.parse().map(Value::Integer).map_err(|_| bad()))
                .collect::<Result<_>>()?,
        ),
        _ => Value::String(raw.to_string()),
    })
}

impl RunConfig {
    pub fn keys() -> Vec<&'static str> {
        KEY_HELP.iter().map(|(k, _)| *k).collect()
    }

    /// Defaults, then the optional TOML file, then `overrides` in order.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut table = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                text.parse::<Table>()
                    .map_err(|e| Error::in_file(path, Error::Invalid(e.to_string())))?
            }
            None => Table::new(),
        };
        let template = type_template();
        for key in table.keys() {
            if !template.contains_key(key) {
                return Err(Error::config(key.as_str(), "unknown key"));
            }
        }
        for (key, raw) in overrides {
            let kind = template
                .get(key)
                .ok_or_else(|| Error::config(key.as_str(), "unknown key"))?;
            table.insert(key.clone(), parse_override(key, raw, kind)?);
        }
        // Integers are accepted wherever a real is expected.
        for (key, value) in table.iter_mut() {
            if let (Some(Value::Float(_)), Value::Integer(i)) = (template.get(key), &*value) {
                *value = Value::Float(*i as f64);
            }
        }
        let mut merged = Table::try_from(RunConfig::default()).expect("run config serializes");
        merged.extend(table);
        let config: RunConfig = Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| Error::config("config", e.message().to_string()))?;
        Ok(config)
    }

    /// Checks every field used by `command`; errors name the failing key.
    pub fn validate(&self, command: Subcommand) -> Result<()> {
        if self.hidden_dims.len() != 2 {
            return Err(Error::config("hidden_dims", "exactly two widths are required"));
        }
        self.vae_config(1).validate().map_err(|e| match e {
            Error::InvalidConfig { field, message } if field == "epsilon" => {
                Error::config("optimizer_epsilon", message)
            }
            other => other,
        })?;
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::config("train_fraction", "must lie in (0,1)"));
        }
        if self.min_count == 0 {
            return Err(Error::config("min_count", "must be >= 1"));
        }
        if self.kmeans_restarts == 0 {
            return Err(Error::config("kmeans_restarts", "must be >= 1"));
        }
        if self.kmeans_max_iters == 0 {
            return Err(Error::config("kmeans_max_iters", "must be >= 1"));
        }
        if !(self.kmeans_tol >= 0.0) {
            return Err(Error::config("kmeans_tol", "must be >= 0"));
        }
        if !(self.probe_l2 >= 0.0) {
            return Err(Error::config("probe_l2", "must be >= 0"));
        }
        if !(self.probe_learning_rate > 0.0) {
            return Err(Error::config("probe_learning_rate", "must be > 0"));
        }
        if self.latent_sizes.is_empty() || self.latent_sizes.contains(&0) {
            return Err(Error::config("latent_sizes", "must list positive sizes"));
        }
        if self.folds < 2 {
            return Err(Error::config("folds", "must be >= 2"));
        }
        let required: &[(&str, &Option<PathBuf>)] = match command {
            Subcommand::Synth => {
                self.synthetic_spec().validate()?;
                &[]
            }
            Subcommand::Preprocess => &[("profiles", &self.profiles)],
            Subcommand::Train | Subcommand::SweepLatent => &[("cohort", &self.cohort)],
            Subcommand::Embed | Subcommand::EvalRecon => &[("checkpoint", &self.checkpoint), ("cohort", &self.cohort)],
            Subcommand::EvalCluster if self.pca > 0 => &[("cohort", &self.cohort)],
            Subcommand::EvalCluster | Subcommand::PlotData => &[("embedding", &self.embedding)],
            Subcommand::Probe => {
                if self.embedding.is_none() && self.cohort.is_none() {
                    return Err(Error::config("embedding", "probe needs an embedding or a cohort"));
                }
                &[("labels", &self.labels)]
            }
        };
        for (key, value) in required {
            if value.is_none() {
                return Err(Error::config(*key, format!("is required by {}", command.name())));
            }
        }
        Ok(())
    }

    pub fn vae_config(&self, input_dim: usize) -> VaeConfig {
        let mut hidden = [0usize; 2];
        for (slot, &h) in hidden.iter_mut().zip(&self.hidden_dims) {
            *slot = h;
        }
        VaeConfig {
            input_dim,
            hidden_dims: hidden,
            latent_dim: self.latent_dim,
            dropout_rate: self.dropout_rate,
            l1_coefficient: self.l1_coefficient,
            leaky_slope: self.leaky_slope,
            bn_epsilon: self.bn_epsilon,
            bn_momentum: self.bn_momentum,
            loss_kind: self.loss_kind,
            beta_schedule: BetaSchedule {
                kind: self.beta_schedule,
                beta_max: self.beta_max,
                warmup_epochs: self.warmup_epochs,
            },
            optimizer: OptimizerConfig {
                learning_rate: self.learning_rate,
                rho: self.rho,
                epsilon: self.optimizer_epsilon,
            },
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
        }
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            n_samples: self.n_samples,
            n_loci: self.n_loci,
            n_clusters: self.n_clusters,
            background_rate: self.background_rate,
            enriched_rate: self.enriched_rate,
            enriched_loci_per_cluster: self.enriched_loci_per_cluster,
            seed: self.seed,
        }
    }

    pub fn kmeans_config(&self, k: usize) -> KmeansConfig {
        KmeansConfig {
            k,
            seed: self.seed,
            restarts: self.kmeans_restarts,
            max_iters: self.kmeans_max_iters,
            rel_tol: self.kmeans_tol,
        }
    }

    pub fn probe_config(&self) -> ProbeConfig {
        ProbeConfig {
            l2: self.probe_l2,
            learning_rate: self.probe_learning_rate,
            iterations: self.probe_iterations,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}
