//! Synthetic test corpus: smooth gradients, checkerboards, low-pass
//! filtered noise and sinusoidal blobs, all in `[0.2, 0.8]`.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::image::Image;
use crate::rng::{stream, uniform, Gaussian, Purpose};
use crate::{math, Result};

const LO: f64 = 0.2;
const HI: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pattern {
    Gradient,
    Checkerboard,
    FilteredNoise,
    Waves,
}

impl Pattern {
    /// Pattern of image `index`: consecutive triples share a pattern.
    pub fn for_index(index: usize) -> Self {
        match (index / 3) % 4 {
            0 => Pattern::Gradient,
            1 => Pattern::Checkerboard,
            2 => Pattern::FilteredNoise,
            _ => Pattern::Waves,
        }
    }
}

fn rescale(plane: &mut [f64]) {
    let (min, max) = plane
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = if max > min { max - min } else { 1.0 };
    for v in plane {
        *v = LO + (HI - LO) * (*v - min) / span;
    }
}

fn box_blur(plane: &mut [f64], h: usize, w: usize, radius: usize) {
    let mut tmp = vec![0.0; plane.len()];
    for y in 0..h {
        for x in 0..w {
            let (lo, hi) = (x.saturating_sub(radius), (x + radius).min(w - 1));
            tmp[y * w + x] = plane[y * w + lo..=y * w + hi].iter().sum::<f64>() / (hi - lo + 1) as f64;
        }
    }
    for y in 0..h {
        for x in 0..w {
            let (lo, hi) = (y.saturating_sub(radius), (y + radius).min(h - 1));
            plane[y * w + x] = (lo..=hi).map(|yy| tmp[yy * w + x]).sum::<f64>() / (hi - lo + 1) as f64;
        }
    }
}

fn render(pattern: Pattern, h: usize, w: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<f64> {
    let mut plane = vec![0.0; h * w];
    match pattern {
        Pattern::Gradient => {
            let angle = 2.0 * PI * uniform(rng);
            let (s, c) = math::sin_cos(angle);
            let curve = 0.5 + uniform(rng);
            for y in 0..h {
                for x in 0..w {
                    let t = (c * x as f64 / w as f64 + s * y as f64 / h as f64 + 2.0) / 4.0;
                    plane[y * w + x] = libm::pow(t, curve);
                }
            }
        }
        Pattern::Checkerboard => {
            let cell = 6 + (uniform(rng) * 10.0) as usize;
            let (oy, ox) = (
                (uniform(rng) * cell as f64) as usize,
                (uniform(rng) * cell as f64) as usize,
            );
            for y in 0..h {
                for x in 0..w {
                    plane[y * w + x] = (((y + oy) / cell + (x + ox) / cell) % 2) as f64;
                }
            }
            box_blur(&mut plane, h, w, 1);
        }
        Pattern::FilteredNoise => {
            let mut g = Gaussian::new(rng.clone());
            for v in plane.iter_mut() {
                *v = g.sample();
            }
            let radius = 3 + (uniform(rng) * 4.0) as usize;
            for _ in 0..3 {
                box_blur(&mut plane, h, w, radius);
            }
        }
        Pattern::Waves => {
            let (fx, fy) = (1.0 + 3.0 * uniform(rng), 1.0 + 3.0 * uniform(rng));
            let (px, py) = (2.0 * PI * uniform(rng), 2.0 * PI * uniform(rng));
            let (cx, cy) = (uniform(rng), uniform(rng));
            for y in 0..h {
                for x in 0..w {
                    let (u, v) = (x as f64 / w as f64, y as f64 / h as f64);
                    let wave = libm::sin(2.0 * PI * fx * u + px) * libm::sin(2.0 * PI * fy * v + py);
                    let d2 = (u - cx) * (u - cx) + (v - cy) * (v - cy);
                    plane[y * w + x] = wave + 1.5 * math::exp(-d2 / 0.02);
                }
            }
        }
    }
    rescale(&mut plane);
    plane
}

/// Image `index` of the synthetic corpus for `seed`.
pub fn synthetic_image(index: usize, channels: usize, height: usize, width: usize, seed: u64) -> Result<Image> {
    let pattern = Pattern::for_index(index);
    let mut pixels = Vec::with_capacity(channels * height * width);
    for c in 0..channels {
        let mut rng = stream(seed, Purpose::Synth, index as u64, c as u64);
        pixels.extend(render(pattern, height, width, &mut rng));
    }
    Image::new(channels, height, width, pixels)
}

/// `count` synthetic images (12 covers every pattern three times).
pub fn synthetic_corpus(count: usize, channels: usize, height: usize, width: usize, seed: u64) -> Result<Vec<Image>> {
    (0..count)
        .map(|i| synthetic_image(i, channels, height, width, seed))
        .collect()
}
