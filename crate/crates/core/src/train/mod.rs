//! Training driver: configuration, learning-rate schedule, the training loop
//! for the four arms and the comparison matrix.

mod matrix;
pub mod optim;
mod trainer;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detector::DetectorConfig;
use crate::error::{Error, Result};
use crate::mixup::MixupConfig;

pub use self::matrix::{run_experiment_matrix, ArmSummary, MatrixReport, MatrixSpec, RowSpec};
pub use self::optim::Sgd;
pub use self::trainer::{train, train_on, CHECKPOINT_FILE, RECORD_FILE, EpochRecord, RunRecord, StepLoss, Trainer};

/// Which training signals are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    /// Detection loss on flipped stills.
    Base,
    /// Detection loss on stills blended with negative frames.
    Mixup,
    /// Base plus temporal coherence regularization on negative-video triples.
    Tcr,
    /// Mixup plus temporal coherence regularization.
    MixupTcr,
}

impl Arm {
    pub const ALL: [Arm; 4] = [Arm::Base, Arm::Mixup, Arm::Tcr, Arm::MixupTcr];

    pub fn uses_mixup(&self) -> bool {
        matches!(self, Arm::Mixup | Arm::MixupTcr)
    }

    pub fn uses_tcr(&self) -> bool {
        matches!(self, Arm::Tcr | Arm::MixupTcr)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Arm::Base => "base",
            Arm::Mixup => "mixup",
            Arm::Tcr => "tcr",
            Arm::MixupTcr => "mixup_tcr",
        }
    }
}

impl std::str::FromStr for Arm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Arm::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::arg(format!("unknown arm `{s}`")))
    }
}

/// Learning rate in effect from `epoch` onwards.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Milestone {
    pub epoch: usize,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub arm: Arm,
    pub epochs: usize,
    pub lr_milestones: Vec<Milestone>,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Frame triples per batch for the regularized arms.
    pub triples_per_batch: usize,
    pub triple_stride: usize,
    pub gamma: f64,
    pub tcr_epsilon: f64,
    pub mixup: MixupConfig,
    pub flip_probability: f64,
    pub seed: u64,
    /// Evaluate both test splits every this many epochs (and after the last).
    pub eval_every: usize,
    pub detector: DetectorConfig,
}

impl TrainingConfig {
    /// The full 26-epoch schedule: 1e-2 until epoch 15, 1e-3 until 21, then 1e-4.
    pub fn full_schedule() -> Self {
        Self {
            epochs: 26,
            lr_milestones: vec![
                Milestone { epoch: 0, lr: 1e-2 },
                Milestone { epoch: 16, lr: 1e-3 },
                Milestone { epoch: 22, lr: 1e-4 },
            ],
            ..Self::desk()
        }
    }

    /// Desk-scale default: the same schedule shape compressed to 10 epochs.
    pub fn desk() -> Self {
        Self {
            arm: Arm::Base,
            epochs: 10,
            lr_milestones: vec![
                Milestone { epoch: 0, lr: 1e-2 },
                Milestone { epoch: 6, lr: 1e-3 },
                Milestone { epoch: 8, lr: 1e-4 },
            ],
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 8,
            triples_per_batch: 8,
            triple_stride: 1,
            gamma: 0.01,
            tcr_epsilon: 1e-8,
            mixup: MixupConfig::Discrete { c: 0.5, p: 0.2 },
            flip_probability: 0.5,
            seed: 0,
            eval_every: 1,
            detector: DetectorConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be >= 1"));
        }
        match self.lr_milestones.first() {
            Some(m) if m.epoch == 0 => {}
            _ => return Err(Error::config("the first lr milestone must be at epoch 0")),
        }
        if self.lr_milestones.windows(2).any(|w| w[0].epoch >= w[1].epoch) {
            return Err(Error::config("lr milestones must be strictly increasing in epoch"));
        }
        if self.lr_milestones.iter().any(|m| !(m.lr.is_finite() && m.lr >= 0.0)) {
            return Err(Error::config("learning rates must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum must be in [0, 1)"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::config("weight_decay must be >= 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        if self.triple_stride == 0 {
            return Err(Error::config("triple_stride must be >= 1"));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::config("gamma must be >= 0"));
        }
        if !(self.tcr_epsilon.is_finite() && self.tcr_epsilon > 0.0) {
            return Err(Error::config("tcr_epsilon must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(Error::config("flip_probability must be in [0, 1]"));
        }
        if self.eval_every == 0 {
            return Err(Error::config("eval_every must be >= 1"));
        }
        self.mixup.validate()?;
        self.detector.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }
}

/// Learning rate of the last milestone at or before `epoch`.
pub fn lr_at(config: &TrainingConfig, epoch: usize) -> Result<f64> {
    if epoch >= config.epochs {
        return Err(Error::arg(format!(
            "epoch {epoch} outside schedule of {} epochs",
            config.epochs
        )));
    }
    config
        .lr_milestones
        .iter()
        .rev()
        .find(|m| m.epoch <= epoch)
        .map(|m| m.lr)
        .ok_or_else(|| Error::config("no lr milestone at epoch 0"))
}
