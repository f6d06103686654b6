//! Seeded random streams.
//!
//! Every random quantity comes from a ChaCha8 generator seeded with
//! `ChaCha8Rng::seed_from_u64(master)` and switched to a numbered stream with
//! `set_stream`, so independent consumers (weight init, per-patch noise,
//! per-epoch shuffles) never share state and can be regenerated in any order.
//!
//! * uniform `[0, 1)`: top 53 bits of `next_u64`, scaled by `2^-53`
//! * standard normal: Box-Muller on two uniforms, `u1` mapped to `(0, 1]`,
//!   producing `sqrt(-2 ln u1) * cos(2 pi u2)` then `... * sin(2 pi u2)`

use core::f64::consts::PI;

pub use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::math;

/// Stream purposes, kept in the top byte of the stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Purpose {
    Init = 1,
    Noise = 2,
    Shuffle = 3,
    Augment = 4,
    Eval = 5,
    Synth = 6,
}

/// Generator for `(purpose, a, b)` under `master`; `a` keeps 24 bits and `b` 32 bits.
pub fn stream(master: u64, purpose: Purpose, a: u64, b: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    let id = ((purpose as u64) << 56) | ((a & 0x00ff_ffff) << 32) | (b & 0xffff_ffff);
    rng.set_stream(id);
    rng
}

#[inline]
pub fn uniform(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Box-Muller normal sampler that caches the second variate.
#[derive(Debug, Clone)]
pub struct Gaussian<R> {
    rng: R,
    spare: Option<f64>,
}

impl<R: RngCore> Gaussian<R> {
    pub fn new(rng: R) -> Self {
        Gaussian { rng, spare: None }
    }

    pub fn sample(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = 1.0 - uniform(&mut self.rng);
        let u2 = uniform(&mut self.rng);
        let radius = math::sqrt(-2.0 * math::ln(u1));
        let (s, c) = math::sin_cos(2.0 * PI * u2);
        self.spare = Some(radius * s);
        radius * c
    }
}
