//! The training loop: epochs of shuffled, augmented, freshly noised patches,
//! one Adam step per batch, validation and a checkpoint after every epoch.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use msdr_core::batch::{PatchBatch, PatchPool};
use msdr_core::image::Image;
use msdr_core::layers::Mode;
use msdr_core::model::Model;
use msdr_core::optim::{train_step, AdamState};
use serde::Serialize;

use crate::ckpt;
use crate::config::TrainConfig;
use crate::corpus::{self, NamedImage};
use crate::error::{AppError, AppResult};
use crate::evaluate::evaluate;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    /// 1-based number of the completed epoch.
    pub epoch: u64,
    /// Mean training loss over the epoch's batches.
    pub loss: f64,
    pub val_psnr_db: Option<f64>,
    pub lr: f64,
    pub seconds: f64,
    /// Optimizer steps taken in this epoch.
    pub steps: u64,
}

impl EpochRecord {
    pub fn log_line(&self) -> String {
        let val = self.val_psnr_db.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
        format!(
            "epoch={} loss={:.6e} val_psnr={} lr={:e} seconds={:.2} steps={}",
            self.epoch, self.loss, val, self.lr, self.seconds, self.steps
        )
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub config: serde_json::Value,
    pub resumed_from_epoch: Option<u64>,
    pub epochs: Vec<EpochRecord>,
    pub total_steps: u64,
    pub patches: usize,
    pub train_images: Vec<String>,
    pub validation_images: Vec<String>,
    /// Training images smaller than the patch size.
    pub skipped_images: Vec<String>,
    pub final_checkpoint: PathBuf,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub summary: TrainSummary,
    /// Trained model, left in infer mode.
    pub model: Model,
    pub adam: AdamState,
}

/// Corpus named by the config: `data_dir`, or the synthetic generator.
pub fn load_corpus(cfg: &TrainConfig) -> AppResult<Vec<NamedImage>> {
    match &cfg.data_dir {
        Some(dir) => corpus::load_dir(dir),
        None => corpus::synthetic(
            cfg.synthetic_count,
            cfg.synthetic_size,
            cfg.model.input_channels,
            cfg.seed,
        ),
    }
}

pub fn checkpoint_path(out_dir: &Path, epoch: u64) -> PathBuf {
    out_dir.join(format!("epoch-{epoch:04}.ckpt"))
}

struct RunLog {
    file: File,
    path: PathBuf,
}

impl RunLog {
    fn open(path: PathBuf) -> AppResult<Self> {
        let file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| AppError::io(&path, e))?;
        Ok(RunLog { file, path })
    }

    fn line(&mut self, text: &str) -> AppResult<()> {
        log::info!("{text}");
        writeln!(self.file, "{text}").map_err(|e| AppError::io(&self.path, e))
    }

    fn flush(&mut self) {
        let _ = self.file.flush();
    }
}

fn describe_batch(batch: &PatchBatch, names: &[String]) -> String {
    let items: Vec<String> = batch
        .meta
        .iter()
        .map(|m| {
            format!(
                "{}@({},{}) aug {} patch {}",
                names[m.source], m.origin.0, m.origin.1, m.augmentation, m.patch_id
            )
        })
        .collect();
    items.join(", ")
}

/// Trains on `images` according to `cfg`, writing `train.log`, one
/// checkpoint per epoch, `final.ckpt` and `summary.json` into `cfg.out_dir`.
pub fn train(cfg: &TrainConfig, images: &[NamedImage]) -> AppResult<TrainOutcome> {
    cfg.check()?;
    cfg.model.validate()?;
    if images.is_empty() {
        return Err(AppError::Invalid("training corpus is empty".into()));
    }
    if let Some(bad) = images.iter().find(|i| i.image.channels() != cfg.model.input_channels) {
        return Err(AppError::Invalid(format!(
            "{} has {} channels but the model takes {}",
            bad.name,
            bad.image.channels(),
            cfg.model.input_channels
        )));
    }
    fs::create_dir_all(&cfg.out_dir).map_err(|e| AppError::io(&cfg.out_dir, e))?;

    let held_out = corpus::holdout_indices(images.len(), cfg.validation_fraction)?;
    let (val, train): (Vec<_>, Vec<_>) = images.iter().enumerate().partition(|(i, _)| held_out.contains(i));
    if train.is_empty() {
        return Err(AppError::Invalid(
            "the validation split leaves no training images".into(),
        ));
    }
    let train_names: Vec<String> = train.iter().map(|(_, n)| n.name.clone()).collect();
    let train_images: Vec<Image> = train.iter().map(|(_, n)| n.image.clone()).collect();
    let val_images: Vec<NamedImage> = val.iter().map(|(_, n)| (*n).clone()).collect();

    let mut pool = PatchPool::from_images(&train_images, cfg.patch_size, cfg.patch_stride)?;
    if let Some(n) = cfg.patches_per_image {
        pool.limit_per_image(n);
    }
    let skipped: Vec<String> = pool.skipped.iter().map(|&i| train_names[i].clone()).collect();
    for name in &skipped {
        log::warn!(
            "{name} is smaller than {0}x{0} and contributes no patches",
            cfg.patch_size
        );
    }
    if pool.is_empty() {
        return Err(AppError::Invalid(format!(
            "no training image is at least {0}x{0}",
            cfg.patch_size
        )));
    }

    let (mut model, mut adam, start_epoch) = match &cfg.resume {
        None => {
            let model = Model::build(&cfg.model, cfg.seed)?;
            let adam = AdamState::for_model(&model);
            (model, adam, 0)
        }
        Some(path) => {
            let ck = ckpt::load(path)?;
            if ck.model.config() != &cfg.model {
                return Err(AppError::Usage(format!(
                    "{}: checkpoint model config differs from the run config",
                    path.display()
                )));
            }
            if ck.seed != cfg.seed {
                return Err(AppError::Usage(format!(
                    "{}: checkpoint was trained with seed {}, run config has {}",
                    path.display(),
                    ck.seed,
                    cfg.seed
                )));
            }
            let adam = ck
                .optimizer
                .ok_or_else(|| AppError::Usage(format!("{}: checkpoint has no optimizer state", path.display())))?;
            (ck.model, adam, ck.epoch)
        }
    };
    model.set_mode(Mode::Train);

    let mut log = RunLog::open(cfg.out_dir.join("train.log"))?;
    log.line(&format!("config {}", cfg.to_json()))?;
    log.line(&format!(
        "corpus train={} validation={} patches={} skipped={}",
        train_names.len(),
        val_images.len(),
        pool.len(),
        skipped.len()
    ))?;
    if cfg.resume.is_some() {
        log.line(&format!("resume epoch={start_epoch} steps={}", adam.t))?;
    }

    let mut records = Vec::new();
    let mut last_checkpoint = None;
    for epoch in start_epoch..cfg.epochs {
        if cfg.max_steps.is_some_and(|m| adam.t >= m) {
            break;
        }
        let started = Instant::now();
        let lr = cfg.schedule.lr_at(epoch);
        let mut loss_sum = 0.0;
        let mut steps = 0u64;
        for indices in pool.epoch_batches(cfg.seed, epoch, cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| adam.t >= m) {
                break;
            }
            let batch = pool.batch(&indices, cfg.seed, epoch, cfg.sigma)?;
            let loss = match train_step(&mut model, &mut adam, &batch.noisy, &batch.residual_label, lr) {
                Ok(loss) => loss,
                Err(e) => {
                    let msg = format!(
                        "epoch {} step {}: {e}; batch: {}",
                        epoch + 1,
                        adam.t + 1,
                        describe_batch(&batch, &train_names)
                    );
                    let _ = log.line(&format!("abort {msg}"));
                    log.flush();
                    return Err(AppError::Invalid(msg));
                }
            };
            loss_sum += loss;
            steps += 1;
        }
        let val_psnr_db = if val_images.is_empty() {
            None
        } else {
            model.set_mode(Mode::Infer);
            let report = evaluate(&model, &val_images, cfg.sigma, cfg.seed)?;
            model.set_mode(Mode::Train);
            Some(report.mean_psnr_db)
        };
        let record = EpochRecord {
            epoch: epoch + 1,
            loss: if steps > 0 { loss_sum / steps as f64 } else { f64::NAN },
            val_psnr_db,
            lr,
            seconds: started.elapsed().as_secs_f64(),
            steps,
        };
        let path = checkpoint_path(&cfg.out_dir, epoch + 1);
        if let Err(e) = ckpt::save(&path, &model, Some(&adam), epoch + 1, cfg.seed) {
            let _ = log.line(&format!("abort {e}"));
            log.flush();
            return Err(e);
        }
        log.line(&record.log_line())?;
        records.push(record);
        last_checkpoint = Some(epoch + 1);
    }

    let completed = last_checkpoint.unwrap_or(start_epoch);
    let final_path = cfg.out_dir.join("final.ckpt");
    ckpt::save(&final_path, &model, Some(&adam), completed, cfg.seed)?;
    model.set_mode(Mode::Infer);

    let summary = TrainSummary {
        config: cfg.to_json(),
        resumed_from_epoch: cfg.resume.as_ref().map(|_| start_epoch),
        epochs: records,
        total_steps: adam.t,
        patches: pool.len(),
        train_images: train_names,
        validation_images: val_images.iter().map(|n| n.name.clone()).collect(),
        skipped_images: skipped,
        final_checkpoint: final_path,
    };
    let summary_path = cfg.out_dir.join("summary.json");
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    fs::write(&summary_path, text).map_err(|e| AppError::io(&summary_path, e))?;
    log.line(&format!("done epochs={completed} steps={}", adam.t))?;
    log.flush();
    Ok(TrainOutcome { summary, model, adam })
}
