//! Checkpoint files.

use std::fs;
use std::path::Path;

use msdr_core::checkpoint::{self, Checkpoint};
use msdr_core::model::Model;
use msdr_core::optim::AdamState;

use crate::error::{AppError, AppResult};

/// Writes through a sibling temporary file and a rename, so a crash never
/// leaves a half-written checkpoint under the final name.
pub fn save(path: &Path, model: &Model, adam: Option<&AdamState>, epoch: u64, seed: u64) -> AppResult<()> {
    let bytes = checkpoint::encode(model, adam, epoch, seed).map_err(|e| AppError::Invalid(e.to_string()))?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, &bytes).map_err(|e| AppError::io(path, e))?;
    fs::rename(&tmp, path).map_err(|e| AppError::io(path, e))
}

pub fn load(path: &Path) -> AppResult<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| AppError::io(path, e))?;
    Checkpoint::decode(&bytes).map_err(|e| AppError::io(path, e))
}
