use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use super::config::{RunConfig, Subcommand};
use super::tsv;
use crate::baselines::{kmeans_cluster, pca_fit, pca_project};
use crate::dataio::{
    filter_low_frequency, generate_synthetic_cohort, holdout_split, ingest_profiles, read_cohort_cache,
    write_cohort_cache, write_labels, write_profiles, Cohort,
};
use crate::error::{Error, Result};
use crate::linalg::Tensor2;
use crate::metrics::{eval_probe, fit_probe, nmi};
use crate::vae::{embed, evaluate_reconstruction, latent_sweep, load_checkpoint, save_checkpoint, train, VaeModel};

pub const PROFILES_FILE: &str = "profiles.tsv";
pub const LABELS_FILE: &str = "labels.tsv";
pub const BINARY_LABELS_FILE: &str = "binary_labels.tsv";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const HISTORY_FILE: &str = "history.tsv";
pub const EMBEDDING_FILE: &str = "embedding.tsv";
pub const RECON_FILE: &str = "recon.tsv";
pub const CLUSTERS_FILE: &str = "clusters.tsv";
pub const CLUSTER_METRICS_FILE: &str = "cluster_metrics.tsv";
pub const PROBE_FILE: &str = "probe.tsv";
pub const SWEEP_FILE: &str = "sweep.tsv";
pub const SCATTER_FILE: &str = "scatter.tsv";

/// Runs one validated subcommand and returns the summary printed to stdout.
pub fn execute(command: Subcommand, cfg: &RunConfig) -> Result<String> {
    match command {
        Subcommand::Synth => synth(cfg),
        Subcommand::Preprocess => preprocess(cfg),
        Subcommand::Train => run_train(cfg),
        Subcommand::Embed => run_embed(cfg),
        Subcommand::EvalRecon => eval_recon(cfg),
        Subcommand::EvalCluster => eval_cluster(cfg),
        Subcommand::Probe => probe(cfg),
        Subcommand::SweepLatent => sweep(cfg),
        Subcommand::PlotData => plot_data(cfg),
    }
}

fn required<'a>(value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    value.as_deref().ok_or_else(|| Error::config(key, "is required"))
}

fn out(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.out_dir.join(name)
}

fn load_cohort(cfg: &RunConfig) -> Result<Cohort> {
    let dir = required(&cfg.cohort, "cohort")?;
    read_cohort_cache(dir).map_err(|e| Error::in_file(dir, e))
}

fn load_model(cfg: &RunConfig, cohort: &Cohort) -> Result<VaeModel> {
    let path = required(&cfg.checkpoint, "checkpoint")?;
    let ckpt = load_checkpoint(path).map_err(|e| Error::in_file(path, e))?;
    if ckpt.config().input_dim != cohort.n_loci() {
        return Err(Error::Invalid(format!(
            "checkpoint {} expects {} loci but the cohort has {}",
            path.display(),
            ckpt.config().input_dim,
            cohort.n_loci()
        )));
    }
    Ok(ckpt.model)
}

fn read_label_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    crate::dataio::read_labels(BufReader::new(file)).map_err(|e| Error::in_file(path, e))
}

/// Labels for `sample_ids`, from `--labels` when given, else from the cohort.
fn aligned_labels(
    cfg: &RunConfig,
    sample_ids: &[String],
    cohort_labels: Option<&BTreeMap<String, String>>,
) -> Result<Option<Vec<String>>> {
    let (map, source) = match (&cfg.labels, cohort_labels) {
        (Some(path), _) => (read_label_file(path)?, path.display().to_string()),
        (None, Some(map)) => (map.clone(), "the cohort".to_string()),
        (None, None) => return Ok(None),
    };
    sample_ids
        .iter()
        .map(|s| {
            map.get(s)
                .cloned()
                .ok_or_else(|| Error::Invalid(format!("sample {s} has no label in {source}")))
        })
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

fn distinct(labels: &[String]) -> usize {
    labels.iter().collect::<BTreeSet<_>>().len()
}

fn synth(cfg: &RunConfig) -> Result<String> {
    let cohort = generate_synthetic_cohort(&cfg.synthetic_spec())?;
    let labels = cohort.labels().expect("synthetic cohorts carry labels");
    write_profiles(&cohort, &out(cfg, PROFILES_FILE))?;
    let ids = cohort.sample_ids();
    write_labels(
        &out(cfg, LABELS_FILE),
        ids.iter().map(|s| (s.as_str(), labels[s].clone())),
    )?;
    write_labels(
        &out(cfg, BINARY_LABELS_FILE),
        ids.iter().map(|s| {
            let cluster: usize = labels[s].parse().expect("numeric cluster id");
            (s.as_str(), (cluster % 2).to_string())
        }),
    )?;
    Ok(format!(
        "samples\t{}\nloci\t{}\nmutations\t{}",
        cohort.n_samples(),
        cohort.n_loci(),
        cohort.matrix().ones()
    ))
}

fn preprocess(cfg: &RunConfig) -> Result<String> {
    let path = required(&cfg.profiles, "profiles")?;
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let labels = match &cfg.labels {
        Some(lp) => Some(read_label_file(lp)?),
        None => None,
    };
    let cohort = ingest_profiles(BufReader::new(file), None::<&[u8]>).map_err(|e| Error::in_file(path, e))?;
    let cohort = match labels {
        Some(l) => cohort.with_labels(l)?,
        None => cohort,
    };
    let (filtered, mask) = filter_low_frequency(&cohort, cfg.min_count)?;
    write_cohort_cache(&filtered, &cfg.out_dir)?;
    Ok(format!(
        "samples\t{}\nloci_in\t{}\nloci_kept\t{}",
        filtered.n_samples(),
        mask.len(),
        filtered.n_loci()
    ))
}

fn run_train(cfg: &RunConfig) -> Result<String> {
    let cohort = load_cohort(cfg)?;
    let config = cfg.vae_config(cohort.n_loci());
    let split = holdout_split(cohort.n_samples(), cfg.train_fraction, cfg.seed)?;
    let outcome = train(&cohort, &split, &config)?;
    save_checkpoint(
        &outcome.model,
        Some(&outcome.optimizer),
        config.epochs as u64,
        &out(cfg, CHECKPOINT_FILE),
    )?;
    tsv::emit_history(&outcome.history, &out(cfg, HISTORY_FILE))?;
    let last = outcome.history.last().expect("at least one epoch");
    Ok(format!(
        "epochs\t{}\ntotal\t{}\nval_micro_f1\t{}\nval_cosine\t{}",
        outcome.history.len(),
        last.loss.total,
        last.val_micro_f1,
        last.val_cosine
    ))
}

fn run_embed(cfg: &RunConfig) -> Result<String> {
    let cohort = load_cohort(cfg)?;
    let model = load_model(cfg, &cohort)?;
    let z = embed(&model, &cohort)?;
    tsv::write_embedding(&out(cfg, EMBEDDING_FILE), cohort.sample_ids(), &z)?;
    Ok(format!("samples\t{}\nlatent_dim\t{}", z.rows(), z.cols()))
}

fn eval_recon(cfg: &RunConfig) -> Result<String> {
    let cohort = load_cohort(cfg)?;
    let model = load_model(cfg, &cohort)?;
    let rows: Vec<usize> = (0..cohort.n_samples()).collect();
    let m = evaluate_reconstruction(&model, &cohort, &rows)?;
    tsv::write_metrics(
        &out(cfg, RECON_FILE),
        &[("micro_f1", m.micro_f1), ("mean_cosine", m.mean_cosine)],
    )?;
    Ok(format!("micro_f1\t{}\nmean_cosine\t{}", m.micro_f1, m.mean_cosine))
}

/// Feature matrix for clustering or probing: the embedding file when given,
/// otherwise the cohort (optionally projected onto `pca` components).
fn features(cfg: &RunConfig, pca: usize) -> Result<(Vec<String>, Tensor2, Option<Cohort>)> {
    if pca > 0 || cfg.embedding.is_none() {
        let cohort = load_cohort(cfg)?;
        let x = cohort.matrix().to_tensor();
        let x = if pca > 0 {
            let model = pca_fit(&x, pca)?;
            pca_project(&model, &x)?
        } else {
            x
        };
        return Ok((cohort.sample_ids().to_vec(), x, Some(cohort)));
    }
    let path = required(&cfg.embedding, "embedding")?;
    let (ids, z) = tsv::read_embedding(path)?;
    Ok((ids, z, None))
}

fn eval_cluster(cfg: &RunConfig) -> Result<String> {
    let (ids, x, cohort) = features(cfg, cfg.pca)?;
    let labels = aligned_labels(cfg, &ids, cohort.as_ref().and_then(Cohort::labels))?
        .ok_or_else(|| Error::config("labels", "eval-cluster needs labels"))?;
    let k = if cfg.k > 0 { cfg.k } else { distinct(&labels) };
    let result = kmeans_cluster(&x, &cfg.kmeans_config(k))?;
    let score = nmi(&result.labels, &labels)?;
    tsv::write_pairs(
        &out(cfg, CLUSTERS_FILE),
        ("sample_id", "cluster"),
        ids.iter().zip(&result.labels).map(|(s, c)| (s.as_str(), c.to_string())),
    )?;
    tsv::write_metrics(
        &out(cfg, CLUSTER_METRICS_FILE),
        &[
            ("k", k as f64),
            ("nmi", score),
            ("inertia", result.inertia),
            ("iterations", result.iterations as f64),
        ],
    )?;
    Ok(format!("k\t{k}\nnmi\t{score}\ninertia\t{}", result.inertia))
}

fn probe(cfg: &RunConfig) -> Result<String> {
    let (ids, x, _) = features(cfg, 0)?;
    let labels = aligned_labels(cfg, &ids, None)?.expect("labels path validated");
    let y: Vec<u8> = labels
        .iter()
        .map(|l| match l.as_str() {
            "0" => Ok(0),
            "1" => Ok(1),
            other => Err(Error::config(
                "labels",
                format!("probe labels must be 0 or 1, found {other:?}"),
            )),
        })
        .collect::<Result<_>>()?;
    let split = holdout_split(ids.len(), cfg.train_fraction, cfg.seed)?;
    let pick = |rows: &[usize]| (x.select_rows(rows), rows.iter().map(|&i| y[i]).collect::<Vec<u8>>());
    let (x_train, y_train) = pick(&split.train_indices);
    let (x_val, y_val) = pick(&split.val_indices);
    let model = fit_probe(&x_train, &y_train, &cfg.probe_config())?;
    let r = eval_probe(&model, &x_val, &y_val)?;
    tsv::write_metrics(
        &out(cfg, PROBE_FILE),
        &[
            ("precision", r.precision),
            ("recall", r.recall),
            ("f1", r.f1),
            ("support_negative", r.support_negative as f64),
            ("support_positive", r.support_positive as f64),
        ],
    )?;
    Ok(format!(
        "precision\t{}\nrecall\t{}\nf1\t{}",
        r.precision, r.recall, r.f1
    ))
}

fn sweep(cfg: &RunConfig) -> Result<String> {
    let cohort = load_cohort(cfg)?;
    let base = cfg.vae_config(cohort.n_loci());
    let rows = latent_sweep(&cohort, &cfg.latent_sizes, cfg.folds, cfg.seed, &base)?;
    let mut text = String::from("latent_dim\tmean_val_micro_f1");
    for f in 0..cfg.folds {
        text.push_str(&format!("\tfold{f}"));
    }
    text.push('\n');
    for row in &rows {
        text.push_str(&format!("{}\t{:.16e}", row.latent_dim, row.mean()));
        for v in &row.fold_micro_f1 {
            text.push_str(&format!("\t{v:.16e}"));
        }
        text.push('\n');
    }
    tsv::write_text(&out(cfg, SWEEP_FILE), &text)?;
    Ok(rows
        .iter()
        .map(|r| format!("{}\t{}", r.latent_dim, r.mean()))
        .collect::<Vec<_>>()
        .join("\n"))
}

fn plot_data(cfg: &RunConfig) -> Result<String> {
    let path = required(&cfg.embedding, "embedding")?;
    let (ids, xy) = tsv::read_embedding(path)?;
    if xy.cols() != 2 {
        return Err(Error::in_file(
            path,
            Error::Invalid(format!("plot-data needs a 2-D embedding, found {} columns", xy.cols())),
        ));
    }
    let labels = aligned_labels(cfg, &ids, None)?;
    let clusters: Vec<usize> = match &cfg.clusters {
        Some(cp) => {
            let map = tsv::read_pairs_file(cp)?;
            ids.iter()
                .map(|s| {
                    map.get(s)
                        .and_then(|c| c.parse().ok())
                        .ok_or_else(|| Error::Invalid(format!("sample {s} has no cluster in {}", cp.display())))
                })
                .collect::<Result<_>>()?
        }
        None => {
            let k = match (cfg.k, &labels) {
                (0, Some(l)) => distinct(l),
                (0, None) => return Err(Error::config("k", "set k, clusters or labels for plot-data")),
                (k, _) => k,
            };
            kmeans_cluster(&xy, &cfg.kmeans_config(k))?.labels
        }
    };
    let labels = labels.unwrap_or_else(|| vec!["NA".to_string(); ids.len()]);
    tsv::write_scatter(&out(cfg, SCATTER_FILE), &ids, &xy, &clusters, &labels)?;
    Ok(format!("points\t{}", ids.len()))
}
