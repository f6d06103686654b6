use alloc::vec;
use alloc::vec::Vec;

use super::{join, Mode, Param, ParamMut};
use crate::error::shape_err;
use crate::{math, Error, Result, Tensor4};

pub const BN_EPSILON: f64 = 1e-5;
/// Weight of the current batch in the running averages.
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel batch normalization over `(n, h, w)`.
///
/// Train mode normalizes with the biased batch variance and folds the batch
/// mean and unbiased batch variance into the running statistics,
/// `running = (1 - momentum) * running + momentum * batch`.
/// Infer mode uses the running statistics only.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub epsilon: f64,
    pub momentum: f64,
    pub mode: Mode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormGrads {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

/// Per-channel mean and (biased) variance over `(n, h, w)`.
fn batch_stats(input: &Tensor4) -> (Vec<f64>, Vec<f64>) {
    let s = input.shape();
    let count = (s.n * s.plane()) as f64;
    let mut mean = vec![0.0; s.c];
    let mut var = vec![0.0; s.c];
    for c in 0..s.c {
        let mut sum = 0.0;
        for n in 0..s.n {
            sum += input.plane(n, c).iter().sum::<f64>();
        }
        let m = sum / count;
        let mut sq = 0.0;
        for n in 0..s.n {
            sq += input.plane(n, c).iter().map(|&x| (x - m) * (x - m)).sum::<f64>();
        }
        mean[c] = m;
        var[c] = sq / count;
    }
    (mean, var)
}

impl BatchNorm {
    /// gamma = 1, beta = 0, running mean 0 and variance 1.
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            epsilon: BN_EPSILON,
            momentum: BN_MOMENTUM,
            mode: Mode::Train,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, input: &Tensor4) -> Result<()> {
        if input.shape().c != self.channels() {
            return Err(shape_err!(
                "batch norm expects {} channels, input has {}",
                self.channels(),
                input.shape().c
            ));
        }
        Ok(())
    }

    fn check_batch(&self, input: &Tensor4) -> Result<()> {
        let s = input.shape();
        if s.n * s.plane() < 2 {
            return Err(Error::DegenerateBatch { channel: 0 });
        }
        Ok(())
    }

    /// Statistics used to normalize `input` in the current mode.
    fn stats(&self, input: &Tensor4) -> Result<(Vec<f64>, Vec<f64>)> {
        match self.mode {
            Mode::Train => {
                self.check_batch(input)?;
                Ok(batch_stats(input))
            }
            Mode::Infer => Ok((self.running_mean.clone(), self.running_var.clone())),
        }
    }

    fn normalize(&self, input: &Tensor4, mean: &[f64], var: &[f64]) -> Result<Tensor4> {
        let s = input.shape();
        let mut out = input.clone();
        for c in 0..s.c {
            let inv_std = 1.0 / math::sqrt(var[c] + self.epsilon);
            let (g, b, m) = (self.gamma[c], self.beta[c], mean[c]);
            for n in 0..s.n {
                for v in out.plane_mut(n, c) {
                    *v = g * (*v - m) * inv_std + b;
                }
            }
        }
        Ok(out)
    }

    /// Normalizes `input`; in train mode also updates the running statistics.
    pub fn forward(&mut self, input: &Tensor4) -> Result<Tensor4> {
        self.check(input)?;
        let (mean, var) = self.stats(input)?;
        let out = self.normalize(input, &mean, &var)?;
        if self.mode == Mode::Train {
            let s = input.shape();
            let count = (s.n * s.plane()) as f64;
            let unbias = count / (count - 1.0);
            let mom = self.momentum;
            for c in 0..s.c {
                self.running_mean[c] = (1.0 - mom) * self.running_mean[c] + mom * mean[c];
                self.running_var[c] = (1.0 - mom) * self.running_var[c] + mom * var[c] * unbias;
            }
        }
        Ok(out)
    }

    /// Forward pass that leaves the running statistics untouched.
    pub fn forward_frozen(&self, input: &Tensor4) -> Result<Tensor4> {
        self.check(input)?;
        let (mean, var) = self.stats(input)?;
        self.normalize(input, &mean, &var)
    }

    /// Vector-Jacobian product at `input`. In train mode this includes the
    /// dependence of the batch mean and variance on the input:
    ///
    /// `dx = gamma * inv_std / m * (m * dy - sum(dy) - xhat * sum(dy * xhat))`
    pub fn backward(&self, input: &Tensor4, grad_out: &Tensor4) -> Result<(Tensor4, BatchNormGrads)> {
        self.check(input)?;
        if grad_out.shape() != input.shape() {
            return Err(shape_err!(
                "batch norm grad_output {:?} does not match input {:?}",
                grad_out.shape(),
                input.shape()
            ));
        }
        let s = input.shape();
        let (mean, var) = self.stats(input)?;
        let count = (s.n * s.plane()) as f64;
        let mut grad_in = Tensor4::zeros(s)?;
        let mut grads = BatchNormGrads {
            gamma: vec![0.0; s.c],
            beta: vec![0.0; s.c],
        };
        for c in 0..s.c {
            let inv_std = 1.0 / math::sqrt(var[c] + self.epsilon);
            let m = mean[c];
            let (mut sum_dy, mut sum_dy_xhat) = (0.0, 0.0);
            for n in 0..s.n {
                for (&x, &dy) in input.plane(n, c).iter().zip(grad_out.plane(n, c)) {
                    sum_dy += dy;
                    sum_dy_xhat += dy * (x - m) * inv_std;
                }
            }
            grads.gamma[c] = sum_dy_xhat;
            grads.beta[c] = sum_dy;
            let g = self.gamma[c];
            for n in 0..s.n {
                let xs = input.plane(n, c);
                let dys = grad_out.plane(n, c);
                let dst = grad_in.plane_mut(n, c);
                match self.mode {
                    Mode::Train => {
                        let scale = g * inv_std / count;
                        for ((d, &x), &dy) in dst.iter_mut().zip(xs).zip(dys) {
                            let xhat = (x - m) * inv_std;
                            *d = scale * (count * dy - sum_dy - xhat * sum_dy_xhat);
                        }
                    }
                    Mode::Infer => {
                        for (d, &dy) in dst.iter_mut().zip(dys) {
                            *d = g * inv_std * dy;
                        }
                    }
                }
            }
        }
        Ok((grad_in, grads))
    }

    pub fn num_params(&self) -> usize {
        2 * self.channels()
    }

    pub fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<Param<'a>>) {
        out.push(Param {
            name: join(prefix, "gamma"),
            values: &self.gamma,
        });
        out.push(Param {
            name: join(prefix, "beta"),
            values: &self.beta,
        });
    }

    pub fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        out.push(ParamMut {
            name: join(prefix, "gamma"),
            values: &mut self.gamma,
        });
        out.push(ParamMut {
            name: join(prefix, "beta"),
            values: &mut self.beta,
        });
    }

    /// Running statistics (not learnable), mean then variance.
    pub fn collect_buffers<'a>(&'a self, prefix: &str, out: &mut Vec<Param<'a>>) {
        out.push(Param {
            name: join(prefix, "running_mean"),
            values: &self.running_mean,
        });
        out.push(Param {
            name: join(prefix, "running_var"),
            values: &self.running_var,
        });
    }

    pub fn collect_buffers_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        out.push(ParamMut {
            name: join(prefix, "running_mean"),
            values: &mut self.running_mean,
        });
        out.push(ParamMut {
            name: join(prefix, "running_var"),
            values: &mut self.running_var,
        });
    }
}

impl BatchNormGrads {
    pub fn append_to(self, out: &mut Vec<Vec<f64>>) {
        out.push(self.gamma);
        out.push(self.beta);
    }
}
