//! JSON run configuration.
//!
//! Every key is optional; unknown keys are rejected. Defaults: gray model,
//! sigma 25, 100 epochs, batch 64, 45x45 patches, Adam at 1e-3 dropping to
//! 1e-4 from epoch 60.
//!
//! ```json
//! {
//!   "model": { "preset": "reduced", "input_channels": 1 },
//!   "sigma": 25, "seed": 0, "epochs": 100, "batch_size": 64,
//!   "patch_size": 45, "patch_stride": 35, "patches_per_image": null,
//!   "lr_initial": 0.001, "lr_reduced": 0.0001, "lr_drop_epoch": 60,
//!   "max_steps": null, "validation_fraction": 0.1,
//!   "data_dir": null, "synthetic_count": 12, "synthetic_size": 96,
//!   "out_dir": "run", "resume": null
//! }
//! ```
//!
//! `model.preset` is one of `gray`, `color`, `reduced`, `miniature`; the other
//! model keys override single fields of the preset. Without `data_dir` the
//! synthetic corpus is used.

use std::path::{Path, PathBuf};

use msdr_core::model::ModelConfig;
use msdr_core::optim::LrSchedule;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, AppResult};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub preset: Option<String>,
    pub input_channels: Option<usize>,
    pub feature_channels: Option<usize>,
    pub depth: Option<usize>,
    pub multiscale: Option<Vec<(usize, usize)>>,
    pub block_dilations: Option<Vec<usize>>,
    pub num_blocks: Option<usize>,
    pub block_kernel: Option<usize>,
    pub final_kernel: Option<usize>,
}

impl ModelSection {
    pub fn from_config(c: &ModelConfig) -> Self {
        ModelSection {
            preset: None,
            input_channels: Some(c.input_channels),
            feature_channels: Some(c.feature_channels),
            depth: Some(c.depth),
            multiscale: Some(c.multiscale.clone()),
            block_dilations: Some(c.block_dilations.clone()),
            num_blocks: Some(c.num_blocks),
            block_kernel: Some(c.block_kernel),
            final_kernel: Some(c.final_kernel),
        }
    }

    /// Applies the overrides to the preset. Presets other than `gray` and
    /// `color` follow `input_channels` when it is given.
    pub fn resolve(&self) -> AppResult<ModelConfig> {
        let channels = self.input_channels.unwrap_or(1);
        let mut c = match self.preset.as_deref().unwrap_or("gray") {
            "gray" => ModelConfig::gray(),
            "color" => ModelConfig::color(),
            "reduced" => ModelConfig::reduced(channels),
            "miniature" => ModelConfig::miniature(channels),
            other => {
                return Err(AppError::Usage(format!(
                    "unknown model preset {other:?} (expected gray, color, reduced or miniature)"
                )))
            }
        };
        if let Some(v) = self.input_channels {
            c.input_channels = v;
        }
        if let Some(v) = self.feature_channels {
            c.feature_channels = v;
        }
        if let Some(v) = &self.multiscale {
            c.multiscale = v.clone();
        }
        if let Some(v) = &self.block_dilations {
            c.block_dilations = v.clone();
        }
        if let Some(v) = self.num_blocks {
            c.num_blocks = v;
        }
        if let Some(v) = self.block_kernel {
            c.block_kernel = v;
        }
        if let Some(v) = self.final_kernel {
            c.final_kernel = v;
        }
        // Depth follows the block layout unless pinned explicitly.
        c.depth = self.depth.unwrap_or_else(|| c.expected_depth());
        c.validate()?;
        Ok(c)
    }
}

/// The configuration file as written by the user.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfig {
    pub model: Option<ModelSection>,
    pub sigma: Option<f64>,
    pub seed: Option<u64>,
    pub epochs: Option<u64>,
    pub batch_size: Option<usize>,
    pub patch_size: Option<usize>,
    pub patch_stride: Option<usize>,
    pub patches_per_image: Option<usize>,
    pub lr_initial: Option<f64>,
    pub lr_reduced: Option<f64>,
    pub lr_drop_epoch: Option<u64>,
    pub max_steps: Option<u64>,
    pub validation_fraction: Option<f64>,
    pub data_dir: Option<PathBuf>,
    pub synthetic_count: Option<usize>,
    pub synthetic_size: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub resume: Option<PathBuf>,
}

impl CliConfig {
    pub fn from_json(text: &str) -> AppResult<Self> {
        serde_json::from_str(text).map_err(|e| AppError::Usage(format!("config: {e}")))
    }

    pub fn from_file(path: &Path) -> AppResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| AppError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn resolve(&self) -> AppResult<TrainConfig> {
        let d = TrainConfig::default();
        let model = match &self.model {
            Some(section) => section.resolve()?,
            None => d.model.clone(),
        };
        let cfg = TrainConfig {
            model,
            sigma: self.sigma.unwrap_or(d.sigma),
            seed: self.seed.unwrap_or(d.seed),
            epochs: self.epochs.unwrap_or(d.epochs),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            patch_size: self.patch_size.unwrap_or(d.patch_size),
            patch_stride: self.patch_stride.unwrap_or(d.patch_stride),
            patches_per_image: self.patches_per_image.or(d.patches_per_image),
            schedule: LrSchedule {
                initial: self.lr_initial.unwrap_or(d.schedule.initial),
                reduced: self.lr_reduced.unwrap_or(d.schedule.reduced),
                drop_epoch: self.lr_drop_epoch.unwrap_or(d.schedule.drop_epoch),
            },
            max_steps: self.max_steps.or(d.max_steps),
            validation_fraction: self.validation_fraction.unwrap_or(d.validation_fraction),
            data_dir: self.data_dir.clone().or(d.data_dir),
            synthetic_count: self.synthetic_count.unwrap_or(d.synthetic_count),
            synthetic_size: self.synthetic_size.unwrap_or(d.synthetic_size),
            out_dir: self.out_dir.clone().unwrap_or(d.out_dir),
            resume: self.resume.clone().or(d.resume),
        };
        cfg.check()?;
        Ok(cfg)
    }
}

/// Fully resolved training configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub sigma: f64,
    pub seed: u64,
    pub epochs: u64,
    pub batch_size: usize,
    pub patch_size: usize,
    pub patch_stride: usize,
    pub patches_per_image: Option<usize>,
    pub schedule: LrSchedule,
    pub max_steps: Option<u64>,
    pub validation_fraction: f64,
    pub data_dir: Option<PathBuf>,
    pub synthetic_count: usize,
    pub synthetic_size: usize,
    pub out_dir: PathBuf,
    pub resume: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::gray(),
            sigma: 25.0,
            seed: 0,
            epochs: 100,
            batch_size: 64,
            patch_size: 45,
            patch_stride: 35,
            patches_per_image: None,
            schedule: LrSchedule::default(),
            max_steps: None,
            validation_fraction: 0.1,
            data_dir: None,
            synthetic_count: 12,
            synthetic_size: 96,
            out_dir: PathBuf::from("run"),
            resume: None,
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> AppResult<()> {
        let usage = |m: String| Err(AppError::Usage(m));
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return usage(format!("sigma must be positive, got {}", self.sigma));
        }
        if self.batch_size == 0 || self.patch_size == 0 || self.patch_stride == 0 {
            return usage("batch_size, patch_size and patch_stride must be >= 1".into());
        }
        if self.patches_per_image == Some(0) {
            return usage("patches_per_image must be >= 1".into());
        }
        for (name, lr) in [
            ("lr_initial", self.schedule.initial),
            ("lr_reduced", self.schedule.reduced),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return usage(format!("{name} must be positive, got {lr}"));
            }
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return usage(format!(
                "validation_fraction must be in [0, 1), got {}",
                self.validation_fraction
            ));
        }
        if self.data_dir.is_none() && (self.synthetic_count == 0 || self.synthetic_size == 0) {
            return usage("synthetic_count and synthetic_size must be >= 1".into());
        }
        Ok(())
    }

    /// The effective configuration in the file format, with every key set.
    pub fn to_cli_config(&self) -> CliConfig {
        CliConfig {
            model: Some(ModelSection::from_config(&self.model)),
            sigma: Some(self.sigma),
            seed: Some(self.seed),
            epochs: Some(self.epochs),
            batch_size: Some(self.batch_size),
            patch_size: Some(self.patch_size),
            patch_stride: Some(self.patch_stride),
            patches_per_image: self.patches_per_image,
            lr_initial: Some(self.schedule.initial),
            lr_reduced: Some(self.schedule.reduced),
            lr_drop_epoch: Some(self.schedule.drop_epoch),
            max_steps: self.max_steps,
            validation_fraction: Some(self.validation_fraction),
            data_dir: self.data_dir.clone(),
            synthetic_count: Some(self.synthetic_count),
            synthetic_size: Some(self.synthetic_size),
            out_dir: Some(self.out_dir.clone()),
            resume: self.resume.clone(),
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self.to_cli_config()).expect("config serializes")
    }
}
