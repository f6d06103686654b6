//! Whole-image evaluation with seed-deterministic noise.

use std::fmt::Write as _;

use msdr_core::image::{add_gaussian_noise_stream, Image, NoiseSpec};
use msdr_core::metrics::{mean_psnr, psnr};
use msdr_core::model::Model;
use serde::Serialize;

use crate::corpus::NamedImage;
use crate::error::{AppError, AppResult};

/// Noise sub-stream reserved for evaluation; training epochs never reach it.
pub const EVAL_NOISE_STREAM: u64 = 0x00ff_ffff;

/// The noisy observation of image `index` used by every evaluation path.
pub fn eval_noisy(image: &Image, sigma: f64, seed: u64, index: usize) -> AppResult<Image> {
    let spec = NoiseSpec::new(sigma, seed)?;
    Ok(add_gaussian_noise_stream(image, &spec, EVAL_NOISE_STREAM, index as u64))
}

/// Runs the model on a whole image and clamps to `[0, 1]`.
pub fn denoise_image(model: &Model, noisy: &Image) -> AppResult<Image> {
    let out = model.denoise(&noisy.to_tensor())?;
    Ok(Image::from_tensor(&out, 0)?)
}

/// PSNR in JSON: a number, or the string `"inf"` for identical images.
pub fn db_json(v: f64) -> serde_json::Value {
    if v.is_finite() {
        serde_json::json!(v)
    } else {
        serde_json::json!("inf")
    }
}

fn ser_db<S: serde::Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    db_json(*v).serialize(s)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub name: String,
    #[serde(serialize_with = "ser_db")]
    pub psnr_db: f64,
    #[serde(serialize_with = "ser_db")]
    pub noisy_psnr_db: f64,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub sigma: f64,
    pub seed: u64,
    pub rows: Vec<EvalRow>,
    #[serde(serialize_with = "ser_db")]
    pub mean_psnr_db: f64,
    #[serde(serialize_with = "ser_db")]
    pub mean_noisy_psnr_db: f64,
}

/// Adds noise to every image, denoises it whole and measures PSNR against
/// the clean image. The model must be in infer mode.
pub fn evaluate(model: &Model, images: &[NamedImage], sigma: f64, seed: u64) -> AppResult<EvalReport> {
    if images.is_empty() {
        return Err(AppError::Invalid("evaluation corpus is empty".into()));
    }
    let mut rows = Vec::with_capacity(images.len());
    for (i, img) in images.iter().enumerate() {
        let noisy = eval_noisy(&img.image, sigma, seed, i)?;
        let clean = denoise_image(model, &noisy)?;
        let r = psnr(&clean, &img.image)?;
        rows.push(EvalRow {
            name: img.name.clone(),
            psnr_db: r.psnr_db,
            noisy_psnr_db: psnr(&noisy, &img.image)?.psnr_db,
            mse: r.mse,
        });
    }
    let mean = |f: fn(&EvalRow) -> f64| mean_psnr(&rows.iter().map(f).collect::<Vec<_>>()).unwrap_or(f64::NAN);
    Ok(EvalReport {
        sigma,
        seed,
        mean_psnr_db: mean(|r| r.psnr_db),
        mean_noisy_psnr_db: mean(|r| r.noisy_psnr_db),
        rows,
    })
}

/// Aligned text table.
pub fn render_table(report: &EvalReport) -> String {
    let width = report.rows.iter().map(|r| r.name.len()).max().unwrap_or(5).max(7);
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:>10}  {:>10}", "image", "noisy dB", "denoised dB");
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>10.4}  {:>11.4}",
            r.name, r.noisy_psnr_db, r.psnr_db
        );
    }
    let _ = writeln!(
        out,
        "{:<width$}  {:>10.4}  {:>11.4}",
        "average", report.mean_noisy_psnr_db, report.mean_psnr_db
    );
    let _ = write!(out, "sigma {} seed {}", report.sigma, report.seed);
    out
}
