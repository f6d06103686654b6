//! Training patches and mini-batches of (noisy patch, residual label) pairs.
//!
//! Every random choice is a pure function of the master seed:
//!
//! * epoch order: Fisher-Yates over pool indices with the `Shuffle` stream `(epoch, 0)`
//! * augmentation id of patch `p` in epoch `e`: `Augment` stream `(e, p)`
//! * noise of patch `p` in epoch `e`: `Noise` stream `(e, p)`
//!
//! so a batch can be rebuilt from its indices alone, in any order.

use alloc::vec::Vec;

use crate::error::shape_err;
use crate::image::{add_gaussian_noise_stream, augment, window_origins, Image, NoiseSpec};
use crate::rng::{stream, uniform, Purpose};
use crate::{Error, Result, Shape4, Tensor4};

/// Where one patch of a batch came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchMeta {
    /// Index of the source image in the corpus.
    pub source: usize,
    /// Top-left corner of the window in the source image.
    pub origin: (usize, usize),
    /// Dihedral augmentation id, 0..=7.
    pub augmentation: u8,
    /// Master noise seed; the patch noise uses sub-stream `(epoch, patch_id)`.
    pub noise_seed: u64,
    pub epoch: u64,
    pub patch_id: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchBatch {
    pub noisy: Tensor4,
    /// `noisy - clean`, the regression target.
    pub residual_label: Tensor4,
    pub meta: Vec<PatchMeta>,
}

impl PatchBatch {
    /// Augments each clean patch, adds its noise and stacks the results.
    /// Noisy inputs are not clamped.
    pub fn assemble(patches: &[(&Image, PatchMeta)], sigma: f64) -> Result<Self> {
        let (first, _) = patches
            .first()
            .ok_or_else(|| Error::Argument("cannot assemble an empty batch".into()))?;
        let shape = Shape4::new(patches.len(), first.channels(), first.height(), first.width());
        let mut noisy = Vec::with_capacity(shape.len());
        let mut label = Vec::with_capacity(shape.len());
        let mut meta = Vec::with_capacity(patches.len());
        for (clean, m) in patches {
            if !clean.same_shape(first) {
                return Err(shape_err!("batch patches must share one shape"));
            }
            let clean = augment(clean, m.augmentation)?;
            let spec = NoiseSpec::new(sigma, m.noise_seed)?;
            let y = add_gaussian_noise_stream(&clean, &spec, m.epoch, m.patch_id);
            label.extend(y.pixels().iter().zip(clean.pixels()).map(|(y, x)| y - x));
            noisy.extend_from_slice(y.pixels());
            meta.push(*m);
        }
        Ok(PatchBatch {
            noisy: Tensor4::from_vec(shape, noisy)?,
            residual_label: Tensor4::from_vec(shape, label)?,
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }
}

/// One clean training window.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolPatch {
    pub image: Image,
    pub source: usize,
    pub origin: (usize, usize),
}

/// All clean training windows of a corpus, in (image, row, column) order.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPool {
    patches: Vec<PoolPatch>,
    /// Indices of images smaller than the patch size, which contribute nothing.
    pub skipped: Vec<usize>,
    patch_size: usize,
}

impl PatchPool {
    pub fn from_images(images: &[Image], size: usize, stride: usize) -> Result<Self> {
        if size == 0 || stride == 0 {
            return Err(Error::Argument("patch size and stride must be >= 1".into()));
        }
        let mut patches = Vec::new();
        let mut skipped = Vec::new();
        for (source, img) in images.iter().enumerate() {
            let ys = window_origins(img.height(), size, stride);
            let xs = window_origins(img.width(), size, stride);
            if ys.is_empty() || xs.is_empty() {
                skipped.push(source);
                continue;
            }
            for &y in &ys {
                for &x in &xs {
                    patches.push(PoolPatch {
                        image: img.crop(y, x, size)?,
                        source,
                        origin: (y, x),
                    });
                }
            }
        }
        if let Some(first) = patches.first() {
            let c = first.image.channels();
            if patches.iter().any(|p| p.image.channels() != c) {
                return Err(shape_err!("corpus mixes gray and color images"));
            }
        }
        Ok(PatchPool {
            patches,
            skipped,
            patch_size: size,
        })
    }

    /// Keeps at most `n` windows per source image, spread evenly over that
    /// image's windows in extraction order.
    pub fn limit_per_image(&mut self, n: usize) {
        let mut kept = Vec::with_capacity(self.patches.len());
        let mut rest = core::mem::take(&mut self.patches).into_iter().peekable();
        while let Some(first) = rest.next() {
            let source = first.source;
            let mut group = alloc::vec![first];
            while let Some(p) = rest.next_if(|p| p.source == source) {
                group.push(p);
            }
            let len = group.len();
            if len <= n {
                kept.extend(group);
            } else {
                let picks: Vec<usize> = (0..n).map(|k| k * len / n).collect();
                kept.extend(
                    group
                        .into_iter()
                        .enumerate()
                        .filter(|(i, _)| picks.contains(i))
                        .map(|(_, p)| p),
                );
            }
        }
        self.patches = kept;
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn patches(&self) -> &[PoolPatch] {
        &self.patches
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    /// Permutation of the pool for `epoch`.
    pub fn epoch_order(&self, seed: u64, epoch: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.patches.len()).collect();
        let mut rng = stream(seed, Purpose::Shuffle, epoch, 0);
        for i in (1..order.len()).rev() {
            let j = ((uniform(&mut rng) * (i + 1) as f64) as usize).min(i);
            order.swap(i, j);
        }
        order
    }

    /// Index lists of the batches of `epoch`; the last batch may be short.
    pub fn epoch_batches(&self, seed: u64, epoch: u64, batch_size: usize) -> Vec<Vec<usize>> {
        self.epoch_order(seed, epoch)
            .chunks(batch_size.max(1))
            .map(<[usize]>::to_vec)
            .collect()
    }

    /// Builds the batch of the given pool indices for `epoch`.
    pub fn batch(&self, indices: &[usize], seed: u64, epoch: u64, sigma: f64) -> Result<PatchBatch> {
        let mut items = Vec::with_capacity(indices.len());
        for &i in indices {
            let p = self
                .patches
                .get(i)
                .ok_or_else(|| Error::Argument(alloc::format!("patch index {i} out of range")))?;
            let meta = PatchMeta {
                source: p.source,
                origin: p.origin,
                augmentation: augmentation_id(seed, epoch, i as u64),
                noise_seed: seed,
                epoch,
                patch_id: i as u64,
            };
            items.push((&p.image, meta));
        }
        PatchBatch::assemble(&items, sigma)
    }
}

/// Dihedral transform id for patch `patch_id` in `epoch`.
pub fn augmentation_id(seed: u64, epoch: u64, patch_id: u64) -> u8 {
    let mut rng = stream(seed, Purpose::Augment, epoch, patch_id);
    ((uniform(&mut rng) * 8.0) as u8).min(7)
}
