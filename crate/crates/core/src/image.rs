//! Planar float images, Gaussian noise synthesis, patch extraction and the
//! eight dihedral augmentations.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::shape_err;
use crate::rng::{stream, Gaussian, Purpose};
use crate::{Error, Result, Tensor4};

/// Image with `channels` planes of `height x width` pixels, stored planar
/// (`c, h, w` row-major). Pixel values are nominally in `[0, 1]`; noisy
/// images may leave that range.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(shape_err!("images have 1 or 3 channels, got {channels}"));
        }
        if height == 0 || width == 0 {
            return Err(shape_err!("image dimensions must be >= 1, got {height}x{width}"));
        }
        if pixels.len() != channels * height * width {
            return Err(shape_err!(
                "{channels}x{height}x{width} image needs {} pixels, got {}",
                channels * height * width,
                pixels.len()
            ));
        }
        Ok(Image {
            channels,
            height,
            width,
            pixels,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(channels, height, width, vec![value; channels * height * width])
    }

    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }
    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }
    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.pixels[(c * self.height + y) * self.width + x]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }

    /// `1 x C x H x W` tensor.
    pub fn to_tensor(&self) -> Tensor4 {
        Tensor4::from_vec((1, self.channels, self.height, self.width), self.pixels.clone())
            .expect("image invariants guarantee a valid shape")
    }

    /// Batch entry `n` of a tensor with 1 or 3 channels.
    pub fn from_tensor(t: &Tensor4, n: usize) -> Result<Self> {
        let s = t.shape();
        if n >= s.n {
            return Err(shape_err!("batch index {n} out of range for {:?}", s));
        }
        Self::new(s.c, s.h, s.w, t.sample(n).to_vec())
    }

    pub fn clamped(&self) -> Image {
        Image {
            pixels: self.pixels.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            ..self.clone()
        }
    }

    /// `size x size` window with top-left corner `(y, x)`.
    pub fn crop(&self, y: usize, x: usize, size: usize) -> Result<Image> {
        if y + size > self.height || x + size > self.width {
            return Err(shape_err!(
                "crop {size}x{size} at ({y}, {x}) exceeds {}x{}",
                self.height,
                self.width
            ));
        }
        let mut pixels = Vec::with_capacity(self.channels * size * size);
        for c in 0..self.channels {
            for row in y..y + size {
                let start = (c * self.height + row) * self.width + x;
                pixels.extend_from_slice(&self.pixels[start..start + size]);
            }
        }
        Image::new(self.channels, size, size, pixels)
    }
}

/// Noise standard deviation on the 0-255 scale and the stream seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(sigma: f64, seed: u64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Argument(format!("noise sigma must be positive, got {sigma}")));
        }
        Ok(NoiseSpec { sigma, seed })
    }

    /// Standard deviation in the `[0, 1]` pixel domain.
    pub fn sigma_unit(&self) -> f64 {
        self.sigma / 255.0
    }
}

/// `i.i.d. N(0, (sigma/255)^2)` noise field with the image's shape, drawn
/// from the `Noise` stream `(spec.seed, a, b)`.
pub fn gaussian_noise(image: &Image, spec: &NoiseSpec, a: u64, b: u64) -> Image {
    let mut g = Gaussian::new(stream(spec.seed, Purpose::Noise, a, b));
    let s = spec.sigma_unit();
    Image {
        pixels: (0..image.pixels.len()).map(|_| s * g.sample()).collect(),
        ..image.clone()
    }
}

/// `y = x + n` with `n ~ N(0, (sigma/255)^2)`. The result is not clamped.
pub fn add_gaussian_noise(image: &Image, spec: &NoiseSpec) -> Image {
    add_gaussian_noise_stream(image, spec, 0, 0)
}

/// [`add_gaussian_noise`] on sub-stream `(a, b)` of the seed, for
/// per-patch and per-epoch noise.
pub fn add_gaussian_noise_stream(image: &Image, spec: &NoiseSpec, a: u64, b: u64) -> Image {
    let noise = gaussian_noise(image, spec, a, b);
    Image {
        pixels: image.pixels.iter().zip(&noise.pixels).map(|(x, n)| x + n).collect(),
        ..image.clone()
    }
}

/// Window origins along one axis: every `stride` from 0, plus the
/// end-anchored origin `len - size` so the last pixels are covered.
pub fn window_origins(len: usize, size: usize, stride: usize) -> Vec<usize> {
    if len < size {
        return Vec::new();
    }
    let last = len - size;
    let mut origins: Vec<usize> = (0..=last).step_by(stride.max(1)).collect();
    if origins.last() != Some(&last) {
        origins.push(last);
    }
    origins
}

/// All `size x size` windows at `stride`, row-major by origin. Returns an
/// empty list when the image is smaller than the patch.
pub fn extract_patches(image: &Image, size: usize, stride: usize) -> Result<Vec<Image>> {
    if size == 0 || stride == 0 {
        return Err(Error::Argument("patch size and stride must be >= 1".into()));
    }
    let ys = window_origins(image.height, size, stride);
    let xs = window_origins(image.width, size, stride);
    let mut out = Vec::with_capacity(ys.len() * xs.len());
    for &y in &ys {
        for &x in &xs {
            out.push(image.crop(y, x, size)?);
        }
    }
    Ok(out)
}

/// Element of the dihedral group of the square.
///
/// Ids 0-3 rotate counterclockwise by `90 * id` degrees; ids 4-7 rotate by
/// `90 * (id - 4)` degrees and then flip horizontally (mirror left-right).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dihedral(u8);

impl Dihedral {
    pub const IDENTITY: Dihedral = Dihedral(0);

    pub fn new(id: u8) -> Result<Self> {
        if id > 7 {
            return Err(Error::Argument(format!("augmentation id must be 0..=7, got {id}")));
        }
        Ok(Dihedral(id))
    }

    pub fn id(self) -> u8 {
        self.0
    }

    pub fn all() -> impl Iterator<Item = Dihedral> {
        (0..8).map(Dihedral)
    }

    fn rotations(self) -> u8 {
        self.0 % 4
    }

    fn flipped(self) -> bool {
        self.0 >= 4
    }

    /// Transform that undoes `self`.
    pub fn inverse(self) -> Dihedral {
        if self.flipped() {
            self
        } else {
            Dihedral((4 - self.rotations()) % 4)
        }
    }

    /// Source coordinate `(row, col)` for output pixel `(i, j)` of an `n x n` patch.
    fn source(self, i: usize, j: usize, n: usize) -> (usize, usize) {
        let j = if self.flipped() { n - 1 - j } else { j };
        match self.rotations() {
            0 => (i, j),
            1 => (j, n - 1 - i),
            2 => (n - 1 - i, n - 1 - j),
            _ => (n - 1 - j, i),
        }
    }

    /// Applies the transform to every channel of a square image.
    pub fn apply(self, patch: &Image) -> Result<Image> {
        if patch.height != patch.width {
            return Err(shape_err!(
                "augmentation needs a square patch, got {}x{}",
                patch.height,
                patch.width
            ));
        }
        let n = patch.height;
        let mut pixels = Vec::with_capacity(patch.pixels.len());
        for c in 0..patch.channels {
            for i in 0..n {
                for j in 0..n {
                    let (si, sj) = self.source(i, j, n);
                    pixels.push(patch.get(c, si, sj));
                }
            }
        }
        Image::new(patch.channels, n, n, pixels)
    }
}

/// Applies augmentation `transform_id` (0..=7) to a square patch.
pub fn augment(patch: &Image, transform_id: u8) -> Result<Image> {
    Dihedral::new(transform_id)?.apply(patch)
}
