//! Binary checkpoint encoding.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic        4 bytes  "DRCN"
//! version      u32      1
//! config_len   u64
//! config       config_len bytes of canonical key=value text (ModelConfig)
//! epoch        u64      completed epochs
//! seed         u64      master seed of the run
//! params       f64 * N  every learnable tensor in declaration order
//! buffers      f64 * M  batch-norm running mean/var in declaration order
//! has_adam     u8       0 or 1
//! [adam]       u64 t, f64 beta1, f64 beta2, f64 epsilon, then all first
//!              moments followed by all second moments, in parameter order
//! checksum     u64      FNV-1a 64 of every preceding byte
//! ```
//!
//! Tensor shapes are implied by the config, so the file carries no per-tensor
//! headers.

use alloc::string::String;
use alloc::vec::Vec;
use core::hash::Hasher;

use crate::layers::Mode;
use crate::model::{Model, ModelConfig};
use crate::optim::{AdamConfig, AdamState};

pub const MAGIC: [u8; 4] = *b"DRCN";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint: expected magic \"DRCN\", found {found:?}")]
    BadMagic { found: Vec<u8> },
    #[error("unsupported checkpoint version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error("truncated checkpoint: {what} needs {needed} bytes at offset {offset}, file has {available}")]
    Truncated {
        what: &'static str,
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("checkpoint has {extra} unexpected trailing bytes after offset {expected_len}")]
    TrailingBytes { expected_len: usize, extra: usize },
    #[error("checkpoint checksum mismatch: stored {stored:#018x}, computed {computed:#018x}")]
    ChecksumMismatch { stored: u64, computed: u64 },
    #[error("checkpoint config invalid: {0}")]
    BadConfig(String),
    #[error("invalid optimizer flag byte {0} (expected 0 or 1)")]
    BadFlag(u8),
    #[error("optimizer state does not match the model: {0}")]
    OptimizerMismatch(String),
}

/// Decoded checkpoint. The model comes back in infer mode.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub optimizer: Option<AdamState>,
    pub epoch: u64,
    pub seed: u64,
}

fn checksum(bytes: &[u8]) -> u64 {
    let mut h = fnv::FnvHasher::default();
    h.write(bytes);
    h.finish()
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serializes a model, optional optimizer state and run metadata.
pub fn encode(model: &Model, optimizer: Option<&AdamState>, epoch: u64, seed: u64) -> Result<Vec<u8>, CheckpointError> {
    let params = model.params();
    if let Some(adam) = optimizer {
        let lens: Vec<usize> = params.iter().map(|p| p.values.len()).collect();
        if adam.lengths() != lens {
            return Err(CheckpointError::OptimizerMismatch(alloc::format!(
                "adam tracks {} tensors, model has {}",
                adam.m.len(),
                lens.len()
            )));
        }
    }
    let config = model.config().to_canonical_text();
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u64).to_le_bytes());
    out.extend_from_slice(config.as_bytes());
    out.extend_from_slice(&epoch.to_le_bytes());
    out.extend_from_slice(&seed.to_le_bytes());
    for p in &params {
        put_f64s(&mut out, p.values);
    }
    for b in model.buffers() {
        put_f64s(&mut out, b.values);
    }
    match optimizer {
        None => out.push(0),
        Some(adam) => {
            out.push(1);
            out.extend_from_slice(&adam.t.to_le_bytes());
            put_f64s(&mut out, &[adam.config.beta1, adam.config.beta2, adam.config.epsilon]);
            for m in &adam.m {
                put_f64s(&mut out, m);
            }
            for v in &adam.v {
                put_f64s(&mut out, v);
            }
        }
    }
    let sum = checksum(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        if self.bytes.len() - self.pos < n {
            return Err(CheckpointError::Truncated {
                what,
                offset: self.pos,
                needed: n,
                available: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64s_into(&mut self, dst: &mut [f64], what: &'static str) -> Result<(), CheckpointError> {
        let raw = self.take(dst.len() * 8, what)?;
        for (d, chunk) in dst.iter_mut().zip(raw.chunks_exact(8)) {
            *d = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        Ok(())
    }
}

impl Checkpoint {
    pub fn encode(&self) -> Result<Vec<u8>, CheckpointError> {
        encode(&self.model, self.optimizer.as_ref(), self.epoch, self.seed)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r
            .take(4, "magic")
            .map_err(|_| CheckpointError::BadMagic { found: bytes.to_vec() })?;
        if magic != MAGIC {
            return Err(CheckpointError::BadMagic { found: magic.to_vec() });
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion {
                found: version,
                supported: VERSION,
            });
        }
        let config_len = r.u64("config length")?;
        let config_len = usize::try_from(config_len).unwrap_or(usize::MAX);
        let text = r.take(config_len, "config text")?;
        let text = core::str::from_utf8(text).map_err(|e| CheckpointError::BadConfig(alloc::format!("{e}")))?;
        let config =
            ModelConfig::from_canonical_text(text).map_err(|e| CheckpointError::BadConfig(alloc::format!("{e}")))?;
        let epoch = r.u64("epoch")?;
        let seed = r.u64("seed")?;

        let mut model = Model::build(&config, 0).map_err(|e| CheckpointError::BadConfig(alloc::format!("{e}")))?;
        model.set_mode(Mode::Infer);
        for p in model.params_mut() {
            r.f64s_into(p.values, "parameter tensor")?;
        }
        for b in model.buffers_mut() {
            r.f64s_into(b.values, "batch-norm statistics")?;
        }
        let optimizer = match r.take(1, "optimizer flag")?[0] {
            0 => None,
            1 => {
                let t = r.u64("adam step")?;
                let mut hyper = [0.0; 3];
                r.f64s_into(&mut hyper, "adam hyperparameters")?;
                let mut adam = AdamState::with_config(
                    model.params().iter().map(|p| p.values.len()),
                    AdamConfig {
                        beta1: hyper[0],
                        beta2: hyper[1],
                        epsilon: hyper[2],
                    },
                );
                adam.t = t;
                for m in &mut adam.m {
                    r.f64s_into(m, "adam first moment")?;
                }
                for v in &mut adam.v {
                    r.f64s_into(v, "adam second moment")?;
                }
                Some(adam)
            }
            other => return Err(CheckpointError::BadFlag(other)),
        };
        let body_end = r.pos;
        let stored = r.u64("checksum")?;
        if r.pos != bytes.len() {
            return Err(CheckpointError::TrailingBytes {
                expected_len: r.pos,
                extra: bytes.len() - r.pos,
            });
        }
        let computed = checksum(&bytes[..body_end]);
        if stored != computed {
            return Err(CheckpointError::ChecksumMismatch { stored, computed });
        }
        Ok(Checkpoint {
            model,
            optimizer,
            epoch,
            seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> (Model, AdamState) {
        let mut model = Model::build(&ModelConfig::miniature(1), 5).unwrap();
        model.head_bn.running_mean[0] = 0.375;
        let mut adam = AdamState::for_model(&model);
        adam.t = 7;
        adam.m[3][0] = -1.5;
        adam.v[2][1] = 2.5e-7;
        (model, adam)
    }

    fn bits(m: &Model) -> Vec<u64> {
        m.params()
            .iter()
            .chain(m.buffers().iter())
            .flat_map(|p| p.values.iter().map(|v| v.to_bits()))
            .collect()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let (model, adam) = sample();
        let bytes = encode(&model, Some(&adam), 3, 99).unwrap();
        let ck = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(bits(&ck.model), bits(&model));
        assert_eq!(ck.optimizer.as_ref(), Some(&adam));
        assert_eq!((ck.epoch, ck.seed), (3, 99));
        assert_eq!(ck.model.mode(), Mode::Infer);
        assert_eq!(ck.encode().unwrap(), bytes);
    }

    #[test]
    fn without_optimizer() {
        let (model, _) = sample();
        let ck = Checkpoint::decode(&encode(&model, None, 0, 1).unwrap()).unwrap();
        assert!(ck.optimizer.is_none());
    }

    #[test]
    fn truncation_is_reported() {
        let (model, adam) = sample();
        let bytes = encode(&model, Some(&adam), 3, 99).unwrap();
        for cut in [1, 9, bytes.len() / 2, bytes.len() - 20] {
            let err = Checkpoint::decode(&bytes[..bytes.len() - cut]).unwrap_err();
            assert!(matches!(err, CheckpointError::Truncated { .. }), "cut {cut}: {err:?}");
        }
    }

    #[test]
    fn wrong_magic_names_expected_magic() {
        let (model, _) = sample();
        let mut bytes = encode(&model, None, 0, 0).unwrap();
        bytes[0] = b'X';
        let err = Checkpoint::decode(&bytes).unwrap_err();
        assert!(matches!(err, CheckpointError::BadMagic { .. }));
        assert!(alloc::format!("{err}").contains("\"DRCN\""));
        assert!(matches!(
            Checkpoint::decode(b"DR"),
            Err(CheckpointError::BadMagic { .. })
        ));
    }

    #[test]
    fn version_and_checksum_and_trailing() {
        let (model, _) = sample();
        let bytes = encode(&model, None, 0, 0).unwrap();

        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert_eq!(
            Checkpoint::decode(&v2).unwrap_err(),
            CheckpointError::UnsupportedVersion { found: 2, supported: 1 }
        );

        let mut flipped = bytes.clone();
        let mid = bytes.len() - 100;
        flipped[mid] ^= 0x01;
        assert!(matches!(
            Checkpoint::decode(&flipped).unwrap_err(),
            CheckpointError::ChecksumMismatch { .. }
        ));

        let mut longer = bytes.clone();
        longer.push(0);
        assert!(matches!(
            Checkpoint::decode(&longer).unwrap_err(),
            CheckpointError::TrailingBytes { extra: 1, .. }
        ));
    }
}
