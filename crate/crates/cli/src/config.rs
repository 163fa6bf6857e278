//! Flat TOML run configuration.
//!
//! Every key is optional and defaults to the reference value; unknown keys
//! are rejected. Example:
//!
//! ```toml
//! data_root = "data/raw"
//! cache_root = "data/clahe"
//! manifest = "data/manifest.csv"
//! preset = "tiny"
//! seed = 42
//! stage2_max_epochs = 30
//! ```

use std::path::{Path, PathBuf};

use neurovit::augment::AugmentConfig;
use neurovit::imaging::ClaheConfig;
use neurovit::training::{AdamWHyper, Stage1Config, Stage2Config, StageConfig};
use neurovit::vit::ViTConfig;
use serde::Deserialize;

use crate::CliError;

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data_root: PathBuf,
    /// CLAHE cache; when non-empty, training and evaluation read from it.
    pub cache_root: PathBuf,
    pub manifest: PathBuf,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub preset: String,
    pub batch_size: usize,

    pub clahe_tiles: usize,
    pub clahe_clip_limit: f64,

    pub hflip_prob: f64,
    pub rot_degrees: f64,
    pub translate_frac: f64,
    pub zoom_frac: f64,
    pub contrast_frac: f64,
    pub mixup_alpha: f64,
    pub cutmix_alpha: f64,
    pub mixup_prob: f64,
    pub cutmix_prob: f64,
    pub mix_samples: bool,
    pub pixel_augment: bool,

    pub stage1_epochs: usize,
    pub stage1_head_lr: f64,
    pub stage1_weight_decay: f64,
    pub freeze_backbone: bool,
    pub stage2_max_epochs: usize,
    pub stage2_backbone_lr: f64,
    pub stage2_head_lr: f64,
    pub lr_min: f64,
    pub stage2_weight_decay: f64,
    pub patience: usize,
    pub early_stopping: bool,
    pub label_smoothing: f64,
    pub ema_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let st = StageConfig::default();
        let au = AugmentConfig::default();
        let cl = ClaheConfig::default();
        Self {
            data_root: PathBuf::from("data"),
            cache_root: PathBuf::new(),
            manifest: PathBuf::from("manifest.csv"),
            output_dir: PathBuf::from("runs"),
            seed: 42,
            preset: "vit_b16".into(),
            batch_size: st.batch_size,
            clahe_tiles: cl.tiles_x,
            clahe_clip_limit: cl.clip_limit,
            hflip_prob: au.hflip_prob,
            rot_degrees: au.rot_degrees,
            translate_frac: au.translate_frac,
            zoom_frac: au.zoom_frac,
            contrast_frac: au.contrast_frac,
            mixup_alpha: au.mixup_alpha,
            cutmix_alpha: au.cutmix_alpha,
            mixup_prob: au.strategy_probs.0,
            cutmix_prob: au.strategy_probs.1,
            mix_samples: st.mix_samples,
            pixel_augment: true,
            stage1_epochs: st.stage1.epochs,
            stage1_head_lr: st.stage1.head_lr,
            stage1_weight_decay: st.stage1.weight_decay,
            freeze_backbone: st.stage1.backbone_frozen,
            stage2_max_epochs: st.stage2.max_epochs,
            stage2_backbone_lr: st.stage2.backbone_lr,
            stage2_head_lr: st.stage2.head_lr,
            lr_min: st.stage2.lr_min,
            stage2_weight_decay: st.stage2.weight_decay,
            patience: st.stage2.patience,
            early_stopping: st.stage2.early_stopping,
            label_smoothing: st.label_smoothing,
            ema_decay: st.ema_decay,
            adam_beta1: st.adam.beta1,
            adam_beta2: st.adam.beta2,
            adam_eps: st.adam.eps,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::User(format!("config: {}", e.message())))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::User(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::User(format!("{}: {e}", path.display())))
    }

    pub fn model(&self) -> Result<ViTConfig, CliError> {
        preset(&self.preset)
    }

    pub fn clahe(&self) -> ClaheConfig {
        ClaheConfig {
            tiles_x: self.clahe_tiles,
            tiles_y: self.clahe_tiles,
            clip_limit: self.clahe_clip_limit,
            ..ClaheConfig::default()
        }
    }

    pub fn stages(&self) -> StageConfig {
        let augment = AugmentConfig {
            hflip_prob: self.hflip_prob,
            rot_degrees: self.rot_degrees,
            translate_frac: self.translate_frac,
            zoom_frac: self.zoom_frac,
            contrast_frac: self.contrast_frac,
            mixup_alpha: self.mixup_alpha,
            cutmix_alpha: self.cutmix_alpha,
            strategy_probs: (self.mixup_prob, self.cutmix_prob),
        };
        StageConfig {
            stage1: Stage1Config {
                epochs: self.stage1_epochs,
                head_lr: self.stage1_head_lr,
                weight_decay: self.stage1_weight_decay,
                backbone_frozen: self.freeze_backbone,
            },
            stage2: Stage2Config {
                max_epochs: self.stage2_max_epochs,
                backbone_lr: self.stage2_backbone_lr,
                head_lr: self.stage2_head_lr,
                lr_min: self.lr_min,
                weight_decay: self.stage2_weight_decay,
                patience: self.patience,
                early_stopping: self.early_stopping,
            },
            label_smoothing: self.label_smoothing,
            batch_size: self.batch_size,
            adam: AdamWHyper {
                beta1: self.adam_beta1,
                beta2: self.adam_beta2,
                eps: self.adam_eps,
            },
            ema_decay: self.ema_decay,
            augment: if self.pixel_augment { augment } else { augment.without_pixel_transforms() },
            mix_samples: self.mix_samples,
        }
    }
}

pub fn preset(name: &str) -> Result<ViTConfig, CliError> {
    match name {
        "vit_b16" => Ok(ViTConfig::vit_b16()),
        "tiny" => Ok(ViTConfig::tiny()),
        other => Err(CliError::User(format!("unknown preset {other:?}; expected vit_b16 or tiny"))),
    }
}
