//! Loss, optimizer, schedule, weight averaging and the two-stage
//! fine-tuning driver.

mod loss;
mod optim;
mod report;
mod trainer;

pub use loss::{smooth_targets, smoothed_soft_cross_entropy, smoothed_soft_cross_entropy_graph};
pub use optim::{adamw_update, cosine_lr, ema_update, AdamWHyper, AdamWState, EmaState};
pub use report::{EpochRecord, StopReason, TrainReport};
pub use trainer::{evaluate, train_two_stage, EvalSummary, TrainOutcome};

use crate::augment::AugmentConfig;
use crate::error::{Error, Result};

/// Head warm-up with the backbone frozen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stage1Config {
    pub epochs: usize,
    pub head_lr: f64,
    pub weight_decay: f64,
    pub backbone_frozen: bool,
}

/// Full fine-tuning under a per-epoch cosine schedule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stage2Config {
    pub max_epochs: usize,
    pub backbone_lr: f64,
    pub head_lr: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub patience: usize,
    pub early_stopping: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageConfig {
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    pub label_smoothing: f64,
    pub batch_size: usize,
    pub adam: AdamWHyper,
    pub ema_decay: f64,
    pub augment: AugmentConfig,
    /// Apply MixUp/CutMix to every training batch.
    pub mix_samples: bool,
}

impl Default for StageConfig {
    fn default() -> Self {
        Self {
            stage1: Stage1Config {
                epochs: 5,
                head_lr: 1e-3,
                weight_decay: 1e-4,
                backbone_frozen: true,
            },
            stage2: Stage2Config {
                max_epochs: 15,
                backbone_lr: 1e-5,
                head_lr: 1e-4,
                lr_min: 1e-7,
                weight_decay: 1e-4,
                patience: 5,
                early_stopping: true,
            },
            label_smoothing: 0.1,
            batch_size: 32,
            adam: AdamWHyper::default(),
            ema_decay: 0.999,
            augment: AugmentConfig::default(),
            mix_samples: true,
        }
    }
}

impl StageConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let (s1, s2) = (&self.stage1, &self.stage2);
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return bad(format!("label_smoothing {} outside [0, 1)", self.label_smoothing));
        }
        if !(s2.lr_min > 0.0) {
            return bad(format!("lr_min {} must be positive", s2.lr_min));
        }
        for (name, lr) in [
            ("stage1 head_lr", s1.head_lr),
            ("stage2 backbone_lr", s2.backbone_lr),
            ("stage2 head_lr", s2.head_lr),
        ] {
            if !(lr > s2.lr_min && lr.is_finite()) {
                return bad(format!("{name} {lr} must exceed lr_min {}", s2.lr_min));
            }
        }
        if s2.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(s1.weight_decay >= 0.0 && s2.weight_decay >= 0.0) {
            return bad("weight decay must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return bad(format!("ema_decay {} outside [0, 1)", self.ema_decay));
        }
        let a = &self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return bad("AdamW betas must lie in [0, 1) and eps be positive".into());
        }
        self.augment.validate()
    }
}
