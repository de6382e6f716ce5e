use rand::seq::SliceRandom;

use super::config::VaeConfig;
use super::loss::{beta_at_epoch, total_loss, VaeLossBreakdown};
use super::model::{NoiseSource, VaeModel};
use super::optim::{rmsprop_update, OptimizerState};
use crate::dataio::{Cohort, SplitPlan};
use crate::error::{Error, Result};
use crate::linalg::Tensor2;
use crate::metrics::{cosine, F1Counts};
use crate::rng::{stream_rng, Stream};

/// Rows evaluated per inference chunk; inference is row-independent, so the
/// chunk size does not affect results.
const EVAL_CHUNK: usize = 512;

/// Threshold applied to reconstruction probabilities before micro-F1.
pub const RECON_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Sample-weighted means over the epoch's batches.
    pub loss: VaeLossBreakdown,
    /// `NaN` when the validation split is empty.
    pub val_micro_f1: f64,
    pub val_cosine: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: VaeModel,
    pub history: TrainHistory,
    pub optimizer: OptimizerState,
}

/// Reconstruction metrics of a model on a set of cohort rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconMetrics {
    pub micro_f1: f64,
    pub mean_cosine: f64,
}

/// Micro-F1 (threshold 0.5) and mean cosine similarity of deterministic
/// reconstructions through μ.
pub fn evaluate_reconstruction(model: &VaeModel, cohort: &Cohort, rows: &[usize]) -> Result<ReconMetrics> {
    if rows.is_empty() {
        return Ok(ReconMetrics {
            micro_f1: f64::NAN,
            mean_cosine: f64::NAN,
        });
    }
    let mut counts = F1Counts::default();
    let mut cos_sum = 0.0;
    for chunk in rows.chunks(EVAL_CHUNK) {
        let x = cohort.matrix().select_rows_tensor(chunk);
        let probs = model.reconstruct(&x)?;
        counts.accumulate(probs.data(), x.data(), RECON_THRESHOLD);
        for i in 0..x.rows() {
            cos_sum += cosine(probs.row(i), x.row(i));
        }
    }
    Ok(ReconMetrics {
        micro_f1: counts.f1(),
        mean_cosine: cos_sum / rows.len() as f64,
    })
}

/// Inference-mode μ for every sample of the cohort, in sample order.
pub fn embed(model: &VaeModel, cohort: &Cohort) -> Result<Tensor2> {
    let all: Vec<usize> = (0..cohort.n_samples()).collect();
    let mut data = Vec::with_capacity(all.len() * model.config().latent_dim);
    for chunk in all.chunks(EVAL_CHUNK) {
        let mu = model.encode(&cohort.matrix().select_rows_tensor(chunk))?.mu;
        data.extend_from_slice(mu.data());
    }
    Tensor2::from_vec(all.len(), model.config().latent_dim, data)
}

/// Trains a freshly initialized model. The run is a pure function of the
/// cohort, the split and `config` (including its seed); validation rows are
/// only ever evaluated.
pub fn train(cohort: &Cohort, split: &SplitPlan, config: &VaeConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if cohort.n_loci() != config.input_dim {
        return Err(Error::config(
            "input_dim",
            format!(
                "cohort has {} loci but input_dim is {}",
                cohort.n_loci(),
                config.input_dim
            ),
        ));
    }
    if split.train_indices.is_empty() {
        return Err(Error::Invalid("training split is empty".into()));
    }
    if let Some(&bad) = split
        .train_indices
        .iter()
        .chain(&split.val_indices)
        .find(|&&i| i >= cohort.n_samples())
    {
        return Err(Error::Invalid(format!("split index {bad} out of range")));
    }

    let mut model = VaeModel::build(config, &mut stream_rng(config.seed, Stream::Init))?;
    let mut optimizer = OptimizerState::for_params(&model.params());
    let mut shuffle_rng = stream_rng(config.seed, Stream::Shuffle);
    let mut dropout_rng = stream_rng(config.seed, Stream::Dropout);
    let mut reparam_rng = stream_rng(config.seed, Stream::Reparam);

    let mut order = split.train_indices.clone();
    let mut history = TrainHistory::default();
    for epoch in 0..config.epochs {
        let beta = beta_at_epoch(&config.beta_schedule, epoch);
        order.shuffle(&mut shuffle_rng);
        let mut sums = [0.0f64; 3];
        for (batch_idx, rows) in order.chunks(config.batch_size).enumerate() {
            let x = cohort.matrix().select_rows_tensor(rows);
            let step = model
                .train_step(
                    &x,
                    config.loss_kind,
                    beta,
                    NoiseSource::Sample {
                        dropout: &mut dropout_rng,
                        reparam: &mut reparam_rng,
                    },
                )
                .map_err(|e| match e {
                    Error::NonFinite { context } => Error::NonFinite {
                        context: format!("epoch {epoch}, batch {batch_idx}: {context}"),
                    },
                    other => other,
                })?;
            if !step.loss.total.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("epoch {epoch}, batch {batch_idx}: total loss"),
                });
            }
            model.commit_step(&step)?;
            let mut params = model.params_mut();
            rmsprop_update(&mut params, &step.grads, &mut optimizer, &config.optimizer)?;
            let w = rows.len() as f64;
            sums[0] += w * step.loss.recon;
            sums[1] += w * step.loss.kl;
            sums[2] += w * step.loss.l1;
        }
        let n = order.len() as f64;
        let val = evaluate_reconstruction(&model, cohort, &split.val_indices)?;
        history.records.push(EpochRecord {
            epoch,
            loss: total_loss(sums[0] / n, sums[1] / n, sums[2] / n, beta)?,
            val_micro_f1: val.micro_f1,
            val_cosine: val.mean_cosine,
        });
    }
    Ok(TrainOutcome {
        model,
        history,
        optimizer,
    })
}

/// Cross-validated reconstruction quality for one latent size.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub latent_dim: usize,
    /// Final-epoch validation micro-F1 of every fold.
    pub fold_micro_f1: Vec<f64>,
}

impl SweepRow {
    pub fn mean(&self) -> f64 {
        self.fold_micro_f1.iter().sum::<f64>() / self.fold_micro_f1.len() as f64
    }
}

/// Trains one model per (latent size, fold) with `base` as the template
/// configuration; folds come from `kfold_split(n, folds, split_seed)`.
pub fn latent_sweep(
    cohort: &Cohort,
    latent_sizes: &[usize],
    folds: usize,
    split_seed: u64,
    base: &VaeConfig,
) -> Result<Vec<SweepRow>> {
    if latent_sizes.is_empty() {
        return Err(Error::config("latent_sizes", "must name at least one size"));
    }
    let plans = crate::dataio::kfold_split(cohort.n_samples(), folds, split_seed)?;
    let mut rows = Vec::with_capacity(latent_sizes.len());
    for &latent_dim in latent_sizes {
        let config = VaeConfig {
            latent_dim,
            ..base.clone()
        };
        config.validate()?;
        let mut fold_micro_f1 = Vec::with_capacity(plans.len());
        for plan in &plans {
            let outcome = train(cohort, plan, &config)?;
            let last = outcome.history.last().expect("epochs >= 1");
            fold_micro_f1.push(last.val_micro_f1);
        }
        rows.push(SweepRow {
            latent_dim,
            fold_micro_f1,
        });
    }
    Ok(rows)
}
