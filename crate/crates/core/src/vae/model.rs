use rand::{Rng, RngCore, SeedableRng};
use rand_distr::StandardNormal;

use super::config::{LossKind, VaeConfig};
use super::loss::{
    kl_divergence, kl_gradients, reconstruction_loss_with_grad, total_loss, LatentDistribution, VaeLossBreakdown,
};
use crate::error::{Error, Result};
use crate::linalg::gradcheck::{check_against_finite_differences, GradReport, Perturbable};
use crate::linalg::{Activation, LayerSpec, MaskSource, Mode, Stack, Tape, Tensor2};

/// MLP variational autoencoder.
///
/// Encoder: `Dense → BN → LeakyReLU → Dropout → Dense → BN → LeakyReLU`,
/// followed by two linear heads for μ and log σ². Decoder:
/// `Dense → BN → ReLU → Dropout → Dense → BN → ReLU → Dense → sigmoid`.
/// Dense layers that feed a batch norm carry no bias; the batch-norm shift
/// takes its place.
#[derive(Debug, Clone, PartialEq)]
pub struct VaeModel {
    config: VaeConfig,
    encoder: Stack,
    mu_head: Stack,
    logvar_head: Stack,
    decoder: Stack,
}

const PREFIXES: [&str; 4] = ["encoder", "mu_head", "logvar_head", "decoder"];

fn encoder_specs(c: &VaeConfig) -> Vec<LayerSpec> {
    let [h1, h2] = c.hidden_dims;
    let bn = |dim| LayerSpec::BatchNorm {
        dim,
        epsilon: c.bn_epsilon,
        momentum: c.bn_momentum,
    };
    let act = LayerSpec::Activation(Activation::LeakyRelu(c.leaky_slope));
    vec![
        dense(c.input_dim, h1, c.l1_coefficient, false),
        bn(h1),
        act,
        LayerSpec::Dropout { rate: c.dropout_rate },
        dense(h1, h2, c.l1_coefficient, false),
        bn(h2),
        act,
    ]
}

fn head_specs(c: &VaeConfig) -> Vec<LayerSpec> {
    vec![dense(c.hidden_dims[1], c.latent_dim, c.l1_coefficient, true)]
}

fn decoder_specs(c: &VaeConfig) -> Vec<LayerSpec> {
    let [h1, h2] = c.hidden_dims;
    let bn = |dim| LayerSpec::BatchNorm {
        dim,
        epsilon: c.bn_epsilon,
        momentum: c.bn_momentum,
    };
    let act = LayerSpec::Activation(Activation::Relu);
    vec![
        dense(c.latent_dim, h2, c.l1_coefficient, false),
        bn(h2),
        act,
        LayerSpec::Dropout { rate: c.dropout_rate },
        dense(h2, h1, c.l1_coefficient, false),
        bn(h1),
        act,
        dense(h1, c.input_dim, c.l1_coefficient, true),
        LayerSpec::Activation(Activation::Sigmoid),
    ]
}

fn dense(in_dim: usize, out_dim: usize, l1: f64, bias: bool) -> LayerSpec {
    LayerSpec::Dense {
        in_dim,
        out_dim,
        l1,
        bias,
    }
}

/// Randomness consumed by one training forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardNoise {
    pub encoder_masks: Vec<Tensor2>,
    pub decoder_masks: Vec<Tensor2>,
    /// Standard-normal draws for the reparameterization, `b × latent`.
    pub eps: Tensor2,
}

pub enum NoiseSource<'a> {
    Sample {
        dropout: &'a mut dyn RngCore,
        reparam: &'a mut dyn RngCore,
    },
    Replay(&'a ForwardNoise),
}

#[derive(Clone, Copy)]
enum Part {
    Encoder,
    Decoder,
}

impl NoiseSource<'_> {
    fn masks(&mut self, part: Part) -> MaskSource<'_> {
        match self {
            NoiseSource::Sample { dropout, .. } => MaskSource::Sample(&mut **dropout),
            NoiseSource::Replay(n) => MaskSource::Replay(match part {
                Part::Encoder => &n.encoder_masks,
                Part::Decoder => &n.decoder_masks,
            }),
        }
    }

    fn eps(&mut self, rows: usize, cols: usize) -> Tensor2 {
        match self {
            NoiseSource::Sample { reparam, .. } => standard_normal(rows, cols, &mut **reparam),
            NoiseSource::Replay(n) => n.eps.clone(),
        }
    }
}

/// Result of a training forward/backward pass.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub loss: VaeLossBreakdown,
    /// Aligned with [`VaeModel::params`].
    pub grads: Vec<Tensor2>,
    pub noise: ForwardNoise,
    encoder_tape: Tape,
    decoder_tape: Tape,
}

/// Draws `rows × cols` standard-normal values.
pub fn standard_normal(rows: usize, cols: usize, rng: &mut dyn RngCore) -> Tensor2 {
    Tensor2::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// `z = μ + exp(logvar/2) ⊙ ε` with `ε ~ N(0, I)` from `rng`.
pub fn reparameterize(dist: &LatentDistribution, rng: &mut dyn RngCore) -> Tensor2 {
    let eps = standard_normal(dist.batch_size(), dist.latent_dim(), rng);
    reparameterize_with(dist, &eps).expect("noise shaped like the distribution")
}

pub fn reparameterize_with(dist: &LatentDistribution, eps: &Tensor2) -> Result<Tensor2> {
    dist.mu.check_same_shape(eps, "reparameterize")?;
    let mut z = dist.mu.clone();
    for ((zv, &lv), &e) in z.data_mut().iter_mut().zip(dist.logvar.data()).zip(eps.data()) {
        *zv += (0.5 * lv).exp() * e;
    }
    Ok(z)
}

impl VaeModel {
    /// Assembles the network with Glorot-uniform dense weights drawn from
    /// `rng`, zero biases, γ=1 and δ=0.
    pub fn build(config: &VaeConfig, rng: &mut dyn RngCore) -> Result<Self> {
        config.validate()?;
        Ok(VaeModel {
            config: config.clone(),
            encoder: Stack::build(&encoder_specs(config), rng)?,
            mu_head: Stack::build(&head_specs(config), rng)?,
            logvar_head: Stack::build(&head_specs(config), rng)?,
            decoder: Stack::build(&decoder_specs(config), rng)?,
        })
    }

    pub fn config(&self) -> &VaeConfig {
        &self.config
    }

    pub fn encoder(&self) -> &Stack {
        &self.encoder
    }

    pub fn decoder(&self) -> &Stack {
        &self.decoder
    }

    pub fn decoder_mut(&mut self) -> &mut Stack {
        &mut self.decoder
    }

    fn stacks(&self) -> [&Stack; 4] {
        [&self.encoder, &self.mu_head, &self.logvar_head, &self.decoder]
    }

    pub fn params(&self) -> Vec<&Tensor2> {
        self.stacks().into_iter().flat_map(Stack::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor2> {
        let mut out = self.encoder.params_mut();
        out.extend(self.mu_head.params_mut());
        out.extend(self.logvar_head.params_mut());
        out.extend(self.decoder.params_mut());
        out
    }

    pub fn param_names(&self) -> Vec<String> {
        self.stacks()
            .into_iter()
            .zip(PREFIXES)
            .flat_map(|(s, p)| s.param_names(p))
            .collect()
    }

    pub fn buffers(&self) -> Vec<(String, &Tensor2)> {
        self.stacks()
            .into_iter()
            .zip(PREFIXES)
            .flat_map(|(s, p)| s.buffers(p))
            .collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor2)> {
        let mut out = self.encoder.buffers_mut(PREFIXES[0]);
        out.extend(self.mu_head.buffers_mut(PREFIXES[1]));
        out.extend(self.logvar_head.buffers_mut(PREFIXES[2]));
        out.extend(self.decoder.buffers_mut(PREFIXES[3]));
        out
    }

    pub fn param_count(&self) -> usize {
        self.stacks().iter().map(|s| s.param_count()).sum()
    }

    pub fn l1_penalty(&self) -> f64 {
        self.stacks().iter().map(|s| s.l1_penalty()).sum()
    }

    fn check_input(&self, x: &Tensor2, expected: usize, op: &'static str) -> Result<()> {
        if x.cols() != expected {
            return Err(Error::ShapeMismatch {
                op,
                left: x.shape(),
                right: (x.rows(), expected),
            });
        }
        Ok(())
    }

    /// Runs the encoder and both heads. Running statistics are not touched.
    pub fn encode_batch(&self, x: &Tensor2, mode: Mode, masks: &mut MaskSource<'_>) -> Result<LatentDistribution> {
        self.check_input(x, self.config.input_dim, "encode_batch")?;
        let (h, _) = self.encoder.forward_pure(x, mode, masks)?;
        let (mu, _) = self.mu_head.forward_pure(&h, mode, &mut MaskSource::None)?;
        let (logvar, _) = self.logvar_head.forward_pure(&h, mode, &mut MaskSource::None)?;
        LatentDistribution::new(mu, logvar)
    }

    /// Inference-mode encoding.
    pub fn encode(&self, x: &Tensor2) -> Result<LatentDistribution> {
        self.encode_batch(x, Mode::Inference, &mut MaskSource::None)
    }

    pub fn decode_batch(&self, z: &Tensor2, mode: Mode, masks: &mut MaskSource<'_>) -> Result<Tensor2> {
        self.check_input(z, self.config.latent_dim, "decode_batch")?;
        Ok(self.decoder.forward_pure(z, mode, masks)?.0)
    }

    /// Inference-mode decoding.
    pub fn decode(&self, z: &Tensor2) -> Result<Tensor2> {
        self.decode_batch(z, Mode::Inference, &mut MaskSource::None)
    }

    /// Deterministic reconstruction through μ, used for validation metrics.
    pub fn reconstruct(&self, x: &Tensor2) -> Result<Tensor2> {
        self.decode(&self.encode(x)?.mu)
    }

    /// Train-mode forward and backward pass over one batch. Parameters and
    /// running statistics are left unchanged; see [`VaeModel::commit_step`].
    pub fn train_step(&self, x: &Tensor2, kind: LossKind, beta: f64, noise: NoiseSource<'_>) -> Result<StepOutput> {
        self.check_input(x, self.config.input_dim, "train_step")?;
        let b = x.rows();
        let latent = self.config.latent_dim;
        let mut noise = noise;
        let (h, encoder_tape) = self
            .encoder
            .forward_pure(x, Mode::Train, &mut noise.masks(Part::Encoder))?;
        let (mu, mu_tape) = self.mu_head.forward_pure(&h, Mode::Train, &mut MaskSource::None)?;
        let (logvar, lv_tape) = self.logvar_head.forward_pure(&h, Mode::Train, &mut MaskSource::None)?;
        let dist = LatentDistribution::new(mu, logvar)?;
        let eps = noise.eps(b, latent);
        let z = reparameterize_with(&dist, &eps)?;
        let (probs, decoder_tape) = self
            .decoder
            .forward_pure(&z, Mode::Train, &mut noise.masks(Part::Decoder))?;

        let (recon, dprobs) = reconstruction_loss_with_grad(kind, &probs, x)?;
        let kl = kl_divergence(&dist);
        let l1 = self.l1_penalty();
        if !(recon.is_finite() && kl.is_finite() && l1.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("loss terms recon={recon} kl={kl} l1={l1}"),
            });
        }
        let loss = total_loss(recon, kl, l1, beta)?;

        let (dz, decoder_grads) = self.decoder.backward(&decoder_tape, &dprobs)?;
        let (dkl_mu, dkl_lv) = kl_gradients(&dist);
        let mut dmu = dz.clone();
        let mut dlv = Tensor2::zeros(b, latent);
        for k in 0..dz.len() {
            let sigma = (0.5 * dist.logvar.data()[k]).exp();
            dmu.data_mut()[k] += beta * dkl_mu.data()[k];
            dlv.data_mut()[k] = dz.data()[k] * eps.data()[k] * 0.5 * sigma + beta * dkl_lv.data()[k];
        }
        let (dh_mu, mu_grads) = self.mu_head.backward(&mu_tape, &dmu)?;
        let (dh_lv, lv_grads) = self.logvar_head.backward(&lv_tape, &dlv)?;
        let dh = dh_mu.add(&dh_lv)?;
        let (_, encoder_grads) = self.encoder.backward(&encoder_tape, &dh)?;

        let mut grads = encoder_grads;
        grads.extend(mu_grads);
        grads.extend(lv_grads);
        grads.extend(decoder_grads);

        Ok(StepOutput {
            loss,
            grads,
            noise: ForwardNoise {
                encoder_masks: encoder_tape.dropout_masks(),
                decoder_masks: decoder_tape.dropout_masks(),
                eps,
            },
            encoder_tape,
            decoder_tape,
        })
    }

    /// Folds the batch statistics of a training step into the running
    /// statistics.
    pub fn commit_step(&mut self, step: &StepOutput) -> Result<()> {
        self.encoder.commit_running_stats(&step.encoder_tape)?;
        self.decoder.commit_running_stats(&step.decoder_tape)
    }

    /// Loss with every source of randomness replayed from `noise`.
    pub fn replay_loss(&self, x: &Tensor2, kind: LossKind, beta: f64, noise: &ForwardNoise) -> Result<f64> {
        Ok(self.train_step(x, kind, beta, NoiseSource::Replay(noise))?.loss.total)
    }
}

struct ModelObjective<'a> {
    model: VaeModel,
    x: &'a Tensor2,
    kind: LossKind,
    beta: f64,
    noise: &'a ForwardNoise,
}

impl Perturbable for ModelObjective<'_> {
    fn param_names(&self) -> Vec<String> {
        self.model.param_names()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor2> {
        self.model.params_mut()
    }

    fn objective(&self) -> Result<f64> {
        self.model.replay_loss(self.x, self.kind, self.beta, self.noise)
    }
}

/// Finite-difference check of `analytic` against the total loss of `model`
/// on batch `x`, with dropout masks and reparameterization noise frozen.
#[allow(clippy::too_many_arguments)]
pub fn check_model_gradients(
    model: &VaeModel,
    x: &Tensor2,
    kind: LossKind,
    beta: f64,
    noise: &ForwardNoise,
    analytic: &[Tensor2],
    tolerance: f64,
    fd_step: f64,
) -> Result<GradReport> {
    let mut objective = ModelObjective {
        model: model.clone(),
        x,
        kind,
        beta,
        noise,
    };
    check_against_finite_differences(&mut objective, analytic, tolerance, fd_step)
}

/// Full-model gradient check: samples noise once from `rng`, then compares
/// the analytic gradients with central differences.
pub fn model_grad_check(
    model: &VaeModel,
    x: &Tensor2,
    kind: LossKind,
    beta: f64,
    rng: &mut impl RngCore,
    tolerance: f64,
    fd_step: f64,
) -> Result<(GradReport, StepOutput)> {
    let mut dropout_rng = rand_chacha::ChaCha8Rng::from_rng(&mut *rng);
    let mut reparam_rng = rand_chacha::ChaCha8Rng::from_rng(&mut *rng);
    let step = model.train_step(
        x,
        kind,
        beta,
        NoiseSource::Sample {
            dropout: &mut dropout_rng,
            reparam: &mut reparam_rng,
        },
    )?;
    let report = check_model_gradients(model, x, kind, beta, &step.noise, &step.grads, tolerance, fd_step)?;
    Ok((report, step))
}
