use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Bce,
    SoftF1,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bce" => Ok(LossKind::Bce),
            "soft_f1" => Ok(LossKind::SoftF1),
            other => Err(Error::config("loss_kind", format!("unknown loss {other:?}"))),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossKind::Bce => "bce",
            LossKind::SoftF1 => "soft_f1",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaScheduleKind {
    Constant,
    LinearWarmup,
}

/// Weight of the KL term as a function of the epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaSchedule {
    pub kind: BetaScheduleKind,
    pub beta_max: f64,
    pub warmup_epochs: usize,
}

impl Default for BetaSchedule {
    fn default() -> Self {
        BetaSchedule {
            kind: BetaScheduleKind::LinearWarmup,
            beta_max: 1.0,
            warmup_epochs: 25,
        }
    }
}

impl BetaSchedule {
    pub fn constant(beta: f64) -> Self {
        BetaSchedule {
            kind: BetaScheduleKind::Constant,
            beta_max: beta,
            warmup_epochs: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta_max >= 0.0) || !self.beta_max.is_finite() {
            return Err(Error::config("beta_max", "must be finite and >= 0"));
        }
        if self.kind == BetaScheduleKind::LinearWarmup && self.warmup_epochs == 0 {
            return Err(Error::config("warmup_epochs", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub rho: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 1e-3,
            rho: 0.9,
            epsilon: 1e-8,
        }
    }
}

/// Architecture and training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeConfig {
    pub input_dim: usize,
    pub hidden_dims: [usize; 2],
    pub latent_dim: usize,
    pub dropout_rate: f64,
    pub l1_coefficient: f64,
    pub leaky_slope: f64,
    pub bn_epsilon: f64,
    pub bn_momentum: f64,
    pub loss_kind: LossKind,
    pub beta_schedule: BetaSchedule,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl VaeConfig {
    pub fn new(input_dim: usize) -> Self {
        VaeConfig {
            input_dim,
            hidden_dims: [1024, 256],
            latent_dim: 64,
            dropout_rate: 0.2,
            l1_coefficient: 1e-5,
            leaky_slope: 0.3,
            bn_epsilon: 1e-5,
            bn_momentum: 0.9,
            loss_kind: LossKind::SoftF1,
            beta_schedule: BetaSchedule::default(),
            optimizer: OptimizerConfig::default(),
            batch_size: 128,
            epochs: 100,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::config("input_dim", "must be >= 1"));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::config("hidden_dims", "every hidden width must be >= 1"));
        }
        if self.latent_dim == 0 {
            return Err(Error::config("latent_dim", "must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config("dropout_rate", "must lie in [0,1)"));
        }
        if !(self.l1_coefficient >= 0.0) {
            return Err(Error::config("l1_coefficient", "must be >= 0"));
        }
        if !(self.leaky_slope >= 0.0) {
            return Err(Error::config("leaky_slope", "must be >= 0"));
        }
        if !(self.bn_epsilon > 0.0) {
            return Err(Error::config("bn_epsilon", "must be > 0"));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum < 1.0) {
            return Err(Error::config("bn_momentum", "must lie in (0,1)"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be >= 1"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be >= 1"));
        }
        if !(self.optimizer.learning_rate > 0.0) {
            return Err(Error::config("learning_rate", "must be > 0"));
        }
        if !(self.optimizer.rho >= 0.0 && self.optimizer.rho < 1.0) {
            return Err(Error::config("rho", "must lie in [0,1)"));
        }
        if !(self.optimizer.epsilon >= 0.0) {
            return Err(Error::config("epsilon", "must be >= 0"));
        }
        self.beta_schedule.validate()
    }

    /// Canonical JSON with lexicographically sorted keys.
    pub fn to_canonical_json(&self) -> String {
        // serde_json::Value keeps object keys in a BTreeMap.
        let value = serde_json::to_value(self).expect("config serializes");
        serde_json::to_string(&value).expect("value serializes")
    }
}
