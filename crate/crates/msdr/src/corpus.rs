//! Image sets: directories of PGM/PPM files or the synthetic generator.

use std::fs;
use std::path::Path;

use msdr_core::image::Image;
use msdr_core::synth::synthetic_corpus;

use crate::error::{AppError, AppResult};
use crate::pnm;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedImage {
    pub name: String,
    pub image: Image,
}

fn is_netpbm(path: &Path) -> bool {
    matches!(
        path.extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref(),
        Some("pgm" | "ppm" | "pnm")
    )
}

/// Every `.pgm`, `.ppm` and `.pnm` file directly inside `dir`, sorted by
/// file name.
pub fn load_dir(dir: &Path) -> AppResult<Vec<NamedImage>> {
    let entries = fs::read_dir(dir).map_err(|e| AppError::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| AppError::io(dir, e))?.path();
        if path.is_file() && is_netpbm(&path) {
            paths.push(path);
        }
    }
    paths.sort();
    paths
        .iter()
        .map(|p| {
            Ok(NamedImage {
                name: p.file_name().unwrap_or_default().to_string_lossy().into_owned(),
                image: pnm::read_file(p)?,
            })
        })
        .collect()
}

/// The generated corpus, named `synth_00.pgm`, `synth_01.pgm`, ...
pub fn synthetic(count: usize, size: usize, channels: usize, seed: u64) -> AppResult<Vec<NamedImage>> {
    let ext = if channels == 3 { "ppm" } else { "pgm" };
    Ok(synthetic_corpus(count, channels, size, size, seed)?
        .into_iter()
        .enumerate()
        .map(|(i, image)| NamedImage {
            name: format!("synth_{i:02}.{ext}"),
            image,
        })
        .collect())
}

pub fn write_dir(dir: &Path, images: &[NamedImage]) -> AppResult<()> {
    fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    for img in images {
        pnm::write_file(&dir.join(&img.name), &img.image)?;
    }
    Ok(())
}

/// Indices held out for validation: every `k`-th image with
/// `k = round(1 / fraction)`, i.e. `k-1, 2k-1, ...`. A fraction of 0 holds
/// nothing out.
pub fn holdout_indices(count: usize, fraction: f64) -> AppResult<Vec<usize>> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(AppError::Usage(format!(
            "validation_fraction must be in [0, 1), got {fraction}"
        )));
    }
    if fraction == 0.0 {
        return Ok(Vec::new());
    }
    let k = (1.0 / fraction).round().max(1.0) as usize;
    Ok((1..=count / k).map(|j| j * k - 1).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn holdout_rule() {
        assert_eq!(holdout_indices(12, 0.25).unwrap(), [3, 7, 11]);
        assert_eq!(holdout_indices(12, 0.1).unwrap(), [9]);
        assert_eq!(holdout_indices(5, 0.1).unwrap(), Vec::<usize>::new());
        assert_eq!(holdout_indices(12, 0.0).unwrap(), Vec::<usize>::new());
        assert!(holdout_indices(12, 1.0).is_err());
        assert!(holdout_indices(12, -0.1).is_err());
    }

    #[test]
    fn directory_roundtrip_sorted() {
        let dir = tempfile::tempdir().unwrap();
        let images = synthetic(3, 20, 1, 4).unwrap();
        write_dir(dir.path(), &images).unwrap();
        fs::write(dir.path().join("notes.txt"), "skip me").unwrap();
        let back = load_dir(dir.path()).unwrap();
        assert_eq!(
            back.iter().map(|n| n.name.as_str()).collect::<Vec<_>>(),
            ["synth_00.pgm", "synth_01.pgm", "synth_02.pgm"]
        );
        for (a, b) in images.iter().zip(&back) {
            for (x, y) in a.image.pixels().iter().zip(b.image.pixels()) {
                assert!((x - y).abs() <= 1.0 / 510.0 + 1e-12);
            }
        }
    }
}
