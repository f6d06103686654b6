//! MSE and PSNR on the 8-bit grid.

use crate::error::shape_err;
use crate::image::Image;
use crate::{math, Result};

pub const PEAK_8BIT: f64 = 255.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsnrResult {
    /// Decibels; `f64::INFINITY` when the images are identical after quantization.
    pub psnr_db: f64,
    /// Mean squared error on the 0-255 scale.
    pub mse: f64,
    pub peak: f64,
}

impl PsnrResult {
    pub fn is_infinite(&self) -> bool {
        self.psnr_db.is_infinite()
    }
}

/// `round(v * 255)` clamped to `[0, 255]`.
#[inline]
pub fn quantize_8bit(v: f64) -> f64 {
    math::round(v * 255.0).clamp(0.0, 255.0)
}

/// `10 log10(peak^2 / mse)`, or the infinity sentinel for `mse == 0`.
pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * math::log10(peak * peak / mse)
    }
}

/// MSE on the 0-255 scale after quantizing both images to 8 bits.
pub fn mse_8bit(a: &Image, b: &Image) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(shape_err!(
            "psnr: {}x{}x{} vs {}x{}x{}",
            a.channels(),
            a.height(),
            a.width(),
            b.channels(),
            b.height(),
            b.width()
        ));
    }
    let sum: f64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(&x, &y)| {
            let d = quantize_8bit(x) - quantize_8bit(y);
            d * d
        })
        .sum();
    Ok(sum / a.pixels().len() as f64)
}

/// PSNR over all channels and pixels with peak 255, both images quantized
/// to the 8-bit grid first.
pub fn psnr(a: &Image, b: &Image) -> Result<PsnrResult> {
    let mse = mse_8bit(a, b)?;
    Ok(PsnrResult {
        psnr_db: psnr_from_mse(mse, PEAK_8BIT),
        mse,
        peak: PEAK_8BIT,
    })
}

/// Dataset average: arithmetic mean of per-image PSNR values.
pub fn mean_psnr(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(v: f64) -> Image {
        Image::filled(1, 4, 4, v).unwrap()
    }

    #[test]
    fn identical_is_infinite() {
        let r = psnr(&flat(0.3), &flat(0.3)).unwrap();
        assert!(r.is_infinite());
        assert_eq!(r.mse, 0.0);
    }

    #[test]
    fn mse_625() {
        let r = psnr(&flat(100.0 / 255.0), &flat(125.0 / 255.0)).unwrap();
        assert_eq!(r.mse, 625.0);
        assert!((r.psnr_db - 20.1720).abs() < 1e-4, "{}", r.psnr_db);
    }

    #[test]
    fn black_vs_white_is_zero_db() {
        let r = psnr(&flat(0.0), &flat(1.0)).unwrap();
        assert_eq!(r.psnr_db, 0.0);
    }

    #[test]
    fn quantization_and_clamping() {
        assert_eq!(quantize_8bit(-0.2), 0.0);
        assert_eq!(quantize_8bit(1.3), 255.0);
        assert_eq!(quantize_8bit(0.5), 128.0);
        // Sub-step differences vanish after quantization.
        assert!(psnr(&flat(0.5), &flat(0.5 + 0.1 / 255.0)).unwrap().is_infinite());
    }

    #[test]
    fn shape_mismatch() {
        assert!(psnr(&flat(0.0), &Image::filled(1, 4, 5, 0.0).unwrap()).is_err());
    }

    #[test]
    fn dataset_mean() {
        assert_eq!(mean_psnr(&[]), None);
        assert_eq!(mean_psnr(&[20.0, 30.0]), Some(25.0));
    }
}
