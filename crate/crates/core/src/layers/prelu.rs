use alloc::vec;
use alloc::vec::Vec;

use super::{join, Param, ParamMut};
use crate::error::shape_err;
use crate::{Result, Tensor4};

pub const PRELU_INIT_SLOPE: f64 = 0.25;

/// Parametric ReLU with one negative-side slope per channel:
/// `x` for `x >= 0`, `a_c * x` otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct PRelu {
    pub slope: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PReluGrads {
    pub slope: Vec<f64>,
}

impl PRelu {
    pub fn new(channels: usize) -> Self {
        Self::with_slope(channels, PRELU_INIT_SLOPE)
    }

    pub fn with_slope(channels: usize, slope: f64) -> Self {
        PRelu {
            slope: vec![slope; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.slope.len()
    }

    fn check(&self, input: &Tensor4) -> Result<()> {
        if input.shape().c != self.channels() {
            return Err(shape_err!(
                "prelu expects {} channels, input has {}",
                self.channels(),
                input.shape().c
            ));
        }
        Ok(())
    }

    pub fn forward(&self, input: &Tensor4) -> Result<Tensor4> {
        self.check(input)?;
        let s = input.shape();
        let mut out = input.clone();
        for n in 0..s.n {
            for (c, &a) in self.slope.iter().enumerate() {
                for v in out.plane_mut(n, c) {
                    if *v < 0.0 {
                        *v *= a;
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn backward(&self, input: &Tensor4, grad_out: &Tensor4) -> Result<(Tensor4, PReluGrads)> {
        self.check(input)?;
        if grad_out.shape() != input.shape() {
            return Err(shape_err!(
                "prelu grad_output {:?} does not match input {:?}",
                grad_out.shape(),
                input.shape()
            ));
        }
        let s = input.shape();
        let mut grad_in = grad_out.clone();
        let mut grad_slope = vec![0.0; s.c];
        for n in 0..s.n {
            for (c, &a) in self.slope.iter().enumerate() {
                let xs = input.plane(n, c);
                let dys = grad_out.plane(n, c);
                let dst = grad_in.plane_mut(n, c);
                for ((d, &x), &dy) in dst.iter_mut().zip(xs).zip(dys) {
                    if x < 0.0 {
                        *d = a * dy;
                        grad_slope[c] += x * dy;
                    }
                }
            }
        }
        Ok((grad_in, PReluGrads { slope: grad_slope }))
    }

    pub fn num_params(&self) -> usize {
        self.channels()
    }

    pub fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<Param<'a>>) {
        out.push(Param {
            name: join(prefix, "slope"),
            values: &self.slope,
        });
    }

    pub fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        out.push(ParamMut {
            name: join(prefix, "slope"),
            values: &mut self.slope,
        });
    }
}

impl PReluGrads {
    pub fn append_to(self, out: &mut Vec<Vec<f64>>) {
        out.push(self.slope);
    }
}
