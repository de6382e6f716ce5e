//! MLP variational autoencoder: architecture, objective, optimizer,
//! training loop and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod loss;
pub mod model;
pub mod optim;
pub mod train;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{BetaSchedule, BetaScheduleKind, LossKind, OptimizerConfig, VaeConfig};
pub use loss::{beta_at_epoch, kl_divergence, reconstruction_loss, total_loss, LatentDistribution, VaeLossBreakdown};
pub use model::{
    check_model_gradients, model_grad_check, reparameterize, reparameterize_with, standard_normal, ForwardNoise,
    NoiseSource, StepOutput, VaeModel,
};
pub use optim::{rmsprop_update, OptimizerState};
pub use train::{
    embed, evaluate_reconstruction, latent_sweep, train, EpochRecord, ReconMetrics, SweepRow, TrainHistory,
    TrainOutcome, RECON_THRESHOLD,
};
