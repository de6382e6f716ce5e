//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fail.

mod common;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use mutvae::baselines::{kmeans_cluster, pca_fit, pca_project, KmeansConfig};
use mutvae::cli::tsv::emit_history;
use mutvae::dataio::{
    filter_low_frequency, generate_synthetic_cohort, holdout_split, Cohort, SplitPlan, SyntheticSpec,
};
use mutvae::linalg::Tensor2;
use mutvae::metrics::{classification_report, fit_probe, micro_f1, nmi, ProbeConfig};
use mutvae::vae::{
    check_model_gradients, embed, kl_divergence, latent_sweep, load_checkpoint, model_grad_check, reconstruction_loss,
    save_checkpoint, train, LatentDistribution, LossKind, TrainOutcome, VaeConfig, VaeModel,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GRAD_TOL: f64 = 1e-5;
const GRAD_STEP: f64 = 1e-5;
const GRAD_BUDGET: Duration = Duration::from_secs(30);
const KL_SAMPLES: usize = 1_000_000;
const KL_REL_TOL: f64 = 0.01;
const KL_SPOT_TOL: f64 = 1e-12;
const SOFT_F1_TOL: f64 = 1e-9;
const KMEANS_TOL: f64 = 1e-10;
const NMI_TOL: f64 = 1e-12;
const PCA_TOL: f64 = 1e-8;
const DIRECTIONAL_BUDGET: Duration = Duration::from_secs(600);
const LATENT_GAP: f64 = 0.10;
const LATENT_SPREAD: f64 = 0.10;
const PROBE_GAP: f64 = 0.05;
const SEEDS: [u64; 3] = [1, 2, 3];
const LATENT: usize = 16;
const EPOCHS: usize = 30;
const WARMUP: usize = 25;
const BETA_MAX: f64 = 0.01;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        passed,
        detail: detail.into(),
    }
}

fn synthetic_cohort() -> Cohort {
    let spec = SyntheticSpec {
        n_samples: 600,
        n_loci: 2000,
        n_clusters: 6,
        background_rate: 0.01,
        enriched_rate: 0.35,
        enriched_loci_per_cluster: 40,
        seed: 7,
    };
    let raw = generate_synthetic_cohort(&spec).expect("synthetic cohort");
    filter_low_frequency(&raw, 5).expect("filter").0
}

fn acceptance_config(input_dim: usize, seed: u64) -> VaeConfig {
    let mut c = VaeConfig::new(input_dim);
    c.hidden_dims = [128, 64];
    c.latent_dim = LATENT;
    c.batch_size = 128;
    c.epochs = EPOCHS;
    c.optimizer.learning_rate = 1e-2;
    c.beta_schedule.beta_max = BETA_MAX;
    c.beta_schedule.warmup_epochs = WARMUP;
    c.seed = seed;
    c
}

fn cluster_labels(cohort: &Cohort) -> Vec<String> {
    cohort
        .label_vector()
        .into_iter()
        .map(|l| l.expect("labelled").to_string())
        .collect()
}

fn binary_labels(cohort: &Cohort) -> Vec<u8> {
    cluster_labels(cohort)
        .iter()
        .map(|l| (l.parse::<usize>().expect("numeric cluster") % 2) as u8)
        .collect()
}

fn kmeans_nmi(points: &Tensor2, truth: &[String], seed: u64) -> f64 {
    let r = kmeans_cluster(points, &KmeansConfig::new(6, seed)).expect("kmeans");
    nmi(&r.labels, truth).expect("nmi")
}

fn probe_f1(x: &Tensor2, y: &[u8], split: &SplitPlan) -> f64 {
    let pick = |idx: &[usize]| idx.iter().map(|&i| y[i]).collect::<Vec<u8>>();
    let model = fit_probe(
        &x.select_rows(&split.train_indices),
        &pick(&split.train_indices),
        &ProbeConfig::default(),
    )
    .expect("probe fit");
    let pred = model
        .predict(&x.select_rows(&split.val_indices))
        .expect("probe predict");
    classification_report(&pred, &pick(&split.val_indices))
        .expect("report")
        .f1
}

fn criterion_gradients() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    let mut worst_abs_gap: f64 = 0.0;
    let mut faults_missed = 0;
    let mut faults = 0;
    for kind in [LossKind::SoftF1, LossKind::Bce] {
        for beta in [0.0, 0.5, 1.0] {
            let mut config = VaeConfig::new(12);
            config.hidden_dims = [8, 6];
            config.latent_dim = 3;
            config.batch_size = 4;
            config.loss_kind = kind;
            let model = VaeModel::build(&config, &mut rng).expect("model");
            let x = Tensor2::from_fn(4, 12, |_, _| f64::from(u8::from(rng.random::<f64>() < 0.3)));
            let (report, step) =
                model_grad_check(&model, &x, kind, beta, &mut rng, GRAD_TOL, GRAD_STEP).expect("check");
            worst = worst.max(report.max_rel_error());
            for f in report.failures() {
                worst_abs_gap = worst_abs_gap.max((f.analytic - f.numeric).abs());
                failures.push(format!("{kind}/beta={beta}/{}", f.name));
            }
            for (p, grad) in step.grads.iter().enumerate() {
                let (k, magnitude) = grad
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(k, g)| (k, g.abs()))
                    .max_by(|a, b| a.1.total_cmp(&b.1))
                    .unwrap_or((0, 0.0));
                // A 1% change below the relative-error floor is invisible to the metric.
                if magnitude < 1e-8 {
                    continue;
                }
                let mut faulty = step.grads.clone();
                faulty[p].data_mut()[k] *= 1.01;
                let r = check_model_gradients(&model, &x, kind, beta, &step.noise, &faulty, GRAD_TOL, GRAD_STEP)
                    .expect("check");
                faults += 1;
                if r.passed {
                    faults_missed += 1;
                }
            }
        }
    }
    let elapsed = start.elapsed();
    verdict(
        failures.is_empty() && faults_missed == 0 && elapsed < GRAD_BUDGET,
        format!(
            "max rel error {worst:.2e} (tol {GRAD_TOL:e}); failing tensors {failures:?} with worst \
             |analytic - numeric| {worst_abs_gap:.1e}; faults detected {}/{faults}; {:.1}s",
            faults - faults_missed,
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_kl() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let mu: Vec<f64> = (0..4).map(|_| rng.random_range(-1.5..1.5)).collect();
        let lv: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dist = LatentDistribution::new(Tensor2::row_vector(mu.clone()), Tensor2::row_vector(lv.clone())).unwrap();
        let exact = kl_divergence(&dist);
        let mc = common::kl_monte_carlo(&mu, &lv, KL_SAMPLES, &mut rng);
        worst = worst.max((mc - exact).abs() / exact);
    }
    let one = |m: f64, lv: f64| {
        kl_divergence(&LatentDistribution::new(Tensor2::row_vector(vec![m]), Tensor2::row_vector(vec![lv])).unwrap())
    };
    let spot_a = (one(1.0, 0.0) - 0.5).abs();
    let spot_b = (one(0.0, 4f64.ln()) - (1.5 - 2f64.ln())).abs();
    verdict(
        worst < KL_REL_TOL && spot_a < KL_SPOT_TOL && spot_b < KL_SPOT_TOL,
        format!("worst Monte Carlo rel error {worst:.2e}, spot errors {spot_a:.1e} {spot_b:.1e}"),
    )
}

fn criterion_soft_f1() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (r, c) = (rng.random_range(4..8), rng.random_range(10..40));
        let p = Tensor2::from_fn(r, c, |_, _| f64::from(rng.random_range(0..2u8)));
        let y = Tensor2::from_fn(r, c, |_, _| f64::from(rng.random_range(0..2u8)));
        let soft = reconstruction_loss(LossKind::SoftF1, &p, &y).unwrap();
        worst = worst.max((soft - (1.0 - micro_f1(&p, &y).unwrap())).abs());
    }
    verdict(
        worst < SOFT_F1_TOL,
        format!("max |soft_f1 - (1 - micro_f1)| = {worst:.2e} over 100 pairs"),
    )
}

fn parse_history(text: &str) -> Option<Vec<Vec<f64>>> {
    let mut lines = text.lines();
    if lines.next()? != mutvae::cli::tsv::HISTORY_HEADER {
        return None;
    }
    lines
        .map(|l| l.split('\t').map(|c| c.parse::<f64>().ok()).collect::<Option<Vec<_>>>())
        .collect()
}

fn criterion_warmup(history_tsv: &str) -> Verdict {
    let Some(rows) = parse_history(history_tsv) else {
        return verdict(false, "history did not parse");
    };
    let betas: Vec<f64> = rows.iter().map(|r| r[4]).collect();
    let monotone = betas.windows(2).all(|w| w[0] <= w[1]);
    let starts = betas.first() == Some(&0.0);
    let reaches = betas.get(WARMUP) == Some(&BETA_MAX);
    verdict(
        monotone && starts && reaches,
        format!(
            "non-decreasing {monotone}, first {:?}, at epoch {WARMUP} {:?} (beta_max {BETA_MAX})",
            betas.first(),
            betas.get(WARMUP)
        ),
    )
}

/// Between 3 and 8 points in two unit squares a random distance apart.
fn two_groups(rng: &mut ChaCha8Rng) -> Tensor2 {
    let n = rng.random_range(3..=8);
    let split = rng.random_range(1..n);
    let offset = rng.random_range(2.0..5.0);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let shift = if i < split { 0.0 } else { offset };
            vec![shift + rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]
        })
        .collect();
    Tensor2::from_rows(&rows).expect("rows")
}

fn criterion_oracles() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut kmeans_gap: f64 = 0.0;
    for trial in 0..50 {
        let x = two_groups(&mut rng);
        let best = common::brute_force_two_means(&x);
        let r = kmeans_cluster(&x, &KmeansConfig::new(2, trial)).expect("kmeans");
        kmeans_gap = kmeans_gap.max((r.inertia - best).abs());
    }
    let mut uniform_hits = 0;
    for trial in 0..50 {
        let n = rng.random_range(3..=8);
        let x = Tensor2::from_fn(n, 2, |_, _| rng.random_range(-3.0..3.0));
        let best = common::brute_force_two_means(&x);
        let r = kmeans_cluster(&x, &KmeansConfig::new(2, trial)).expect("kmeans");
        if (r.inertia - best).abs() < KMEANS_TOL {
            uniform_hits += 1;
        }
    }
    let mut nmi_gap: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.random_range(1..80);
        let (ka, kb) = (rng.random_range(1..7), rng.random_range(1..7));
        let a: Vec<usize> = (0..n).map(|_| rng.random_range(0..ka)).collect();
        let b: Vec<usize> = (0..n).map(|_| rng.random_range(0..kb)).collect();
        nmi_gap = nmi_gap.max((nmi(&a, &b).unwrap() - common::nmi_oracle(&a, &b)).abs());
    }
    let mut pca_gap: f64 = 0.0;
    for _ in 0..20 {
        let x = Tensor2::from_fn(10, 5, |_, _| rng.random_range(-3.0..3.0));
        let model = pca_fit(&x, 5).expect("pca");
        let (_, vectors) = common::jacobi_eigen(&common::covariance(&x));
        for (r, oracle) in vectors.iter().enumerate() {
            let got = model.components.row(r);
            let sign = got.iter().zip(oracle).map(|(a, b)| a * b).sum::<f64>().signum();
            for (a, b) in got.iter().zip(oracle) {
                pca_gap = pca_gap.max((a - sign * b).abs());
            }
        }
    }
    verdict(
        kmeans_gap < KMEANS_TOL && nmi_gap < NMI_TOL && pca_gap < PCA_TOL,
        format!(
            "kmeans inertia gap {kmeans_gap:.1e} on two-group inputs ({uniform_hits}/50 uniform inputs at the \
             optimum), nmi gap {nmi_gap:.1e}, pca component gap {pca_gap:.1e}"
        ),
    )
}

struct SeedRun {
    split: SplitPlan,
    outcome: TrainOutcome,
    embedding: Tensor2,
}

fn criterion_vae_vs_pca(cohort: &Cohort, runs: &[SeedRun], started: Instant) -> Verdict {
    let truth = cluster_labels(cohort);
    let pca = pca_fit(&cohort.matrix().to_tensor(), LATENT).expect("pca");
    let projected = pca_project(&pca, &cohort.matrix().to_tensor()).expect("project");
    let mut all = true;
    let mut parts = Vec::new();
    for (seed, run) in SEEDS.iter().zip(runs) {
        let vae = kmeans_nmi(&run.embedding, &truth, *seed);
        let base = kmeans_nmi(&projected, &truth, *seed);
        all &= vae > base;
        parts.push(format!("seed {seed}: vae {vae:.4} pca {base:.4}"));
    }
    let elapsed = started.elapsed();
    verdict(
        all && elapsed < DIRECTIONAL_BUDGET,
        format!("{}; {:.0}s", parts.join(", "), elapsed.as_secs_f64()),
    )
}

fn criterion_latent_sweep(cohort: &Cohort) -> Verdict {
    let base = acceptance_config(cohort.n_loci(), 1);
    let rows = latent_sweep(cohort, &[2, 8, 16, 32], 5, 1, &base).expect("sweep");
    let means: BTreeMap<usize, f64> = rows.iter().map(|r| (r.latent_dim, r.mean())).collect();
    let large = [means[&8], means[&16], means[&32]];
    let large_mean = large.iter().sum::<f64>() / 3.0;
    let gap = 1.0 - means[&2] / large_mean;
    let (lo, hi) = large.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    let spread = (hi - lo) / hi;
    verdict(
        gap >= LATENT_GAP && spread <= LATENT_SPREAD,
        format!(
            "val micro-F1 2:{:.4} 8:{:.4} 16:{:.4} 32:{:.4}; latent 2 is {:.1}% below, spread {:.1}%",
            means[&2],
            means[&8],
            means[&16],
            means[&32],
            100.0 * gap,
            100.0 * spread
        ),
    )
}

fn criterion_probe(cohort: &Cohort, runs: &[SeedRun]) -> Verdict {
    let y = binary_labels(cohort);
    let raw = cohort.matrix().to_tensor();
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (seed, run) in SEEDS.iter().zip(runs) {
        let emb = probe_f1(&run.embedding, &y, &run.split);
        let base = probe_f1(&raw, &y, &run.split);
        worst = worst.max((emb - base).abs());
        parts.push(format!("seed {seed}: embedding {emb:.4} raw {base:.4}"));
    }
    verdict(worst <= PROBE_GAP, parts.join(", "))
}

fn criterion_determinism(cohort: &Cohort, run: &SeedRun, history_tsv: &str) -> Verdict {
    let dir = tempfile::tempdir().expect("tempdir");
    let again = train(cohort, &run.split, run.outcome.model.config()).expect("train");
    let path = dir.path().join("again.tsv");
    emit_history(&again.history, &path).expect("emit");
    let identical = std::fs::read_to_string(&path).expect("read") == history_tsv;

    let ckpt = dir.path().join("model.ckpt");
    save_checkpoint(&run.outcome.model, Some(&run.outcome.optimizer), EPOCHS as u64, &ckpt).expect("save");
    let back = load_checkpoint(&ckpt).expect("load");
    let bits = |m: &VaeModel| -> Vec<u64> {
        m.params()
            .iter()
            .flat_map(|t| t.data().iter().map(|v| v.to_bits()))
            .collect()
    };
    let params_equal = bits(&back.model) == bits(&run.outcome.model);
    let inference_equal = embed(&back.model, cohort).expect("embed") == run.embedding;
    verdict(
        identical && params_equal && inference_equal,
        format!("history byte-identical {identical}, parameters bit-identical {params_equal}, inference identical {inference_equal}"),
    )
}

fn well_formed(text: &str) -> bool {
    match parse_history(text) {
        Some(rows) => {
            rows.len() == EPOCHS
                && rows
                    .iter()
                    .enumerate()
                    .all(|(i, r)| r.len() == 8 && r[0] == i as f64 && r.iter().all(|v| v.is_finite()))
        }
        None => false,
    }
}

fn criterion_training_sanity(cohort: &Cohort, soft_f1: &SeedRun, soft_tsv: &str) -> Verdict {
    let mut config = soft_f1.outcome.model.config().clone();
    config.loss_kind = LossKind::Bce;
    let bce = train(cohort, &soft_f1.split, &config).expect("train");
    let dir = tempfile::tempdir().expect("tempdir");
    let path = dir.path().join("bce.tsv");
    emit_history(&bce.history, &path).expect("emit");
    let bce_tsv = std::fs::read_to_string(&path).expect("read");

    let mut ok = true;
    let mut parts = Vec::new();
    for (name, outcome, tsv) in [("soft_f1", &soft_f1.outcome, soft_tsv), ("bce", &bce, bce_tsv.as_str())] {
        let first = outcome.history.records.first().expect("epoch").loss.recon;
        let last = outcome.history.last().expect("epoch").loss.recon;
        let formed = well_formed(tsv);
        ok &= last < first && formed && outcome.history.len() == EPOCHS;
        parts.push(format!("{name}: recon {first:.4} -> {last:.4}, well-formed {formed}"));
    }
    verdict(ok, parts.join(", "))
}

fn main() {
    let mut results: Vec<(usize, &str, Verdict)> = Vec::new();
    let mut report = |n: usize, name: &'static str, v: Verdict| {
        println!(
            "criterion {n:>2} {}: {name}: {}",
            if v.passed { "PASS" } else { "FAIL" },
            v.detail
        );
        results.push((n, name, v));
    };

    report(1, "gradient fidelity", criterion_gradients());
    report(2, "KL correctness", criterion_kl());
    report(3, "soft-F1 consistency", criterion_soft_f1());

    let started = Instant::now();
    let cohort = synthetic_cohort();
    let dir = tempfile::tempdir().expect("tempdir");
    let mut runs = Vec::new();
    let mut histories = Vec::new();
    for seed in SEEDS {
        let split = holdout_split(cohort.n_samples(), 0.8, seed).expect("split");
        let outcome = train(&cohort, &split, &acceptance_config(cohort.n_loci(), seed)).expect("train");
        let embedding = embed(&outcome.model, &cohort).expect("embed");
        let path = dir.path().join(format!("history_{seed}.tsv"));
        emit_history(&outcome.history, &path).expect("emit");
        histories.push(std::fs::read_to_string(&path).expect("read"));
        runs.push(SeedRun {
            split,
            outcome,
            embedding,
        });
    }

    report(4, "beta warm-up", criterion_warmup(&histories[0]));
    report(5, "oracle equivalence", criterion_oracles());
    report(
        6,
        "VAE clusters beat PCA clusters",
        criterion_vae_vs_pca(&cohort, &runs, started),
    );
    report(7, "latent size sweep", criterion_latent_sweep(&cohort));
    report(8, "probe parity", criterion_probe(&cohort, &runs));
    report(
        9,
        "determinism and persistence",
        criterion_determinism(&cohort, &runs[0], &histories[0]),
    );
    report(
        10,
        "training sanity",
        criterion_training_sanity(&cohort, &runs[0], &histories[0]),
    );

    let failed: Vec<usize> = results.iter().filter(|r| !r.2.passed).map(|r| r.0).collect();
    println!(
        "acceptance: {} of {} criteria passed{}",
        results.len() - failed.len(),
        results.len(),
        if failed.is_empty() {
            String::new()
        } else {
            format!("; failed {failed:?}")
        }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
