//! MSE loss, Adam and the step learning-rate schedule.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::shape_err;
use crate::layers::ParamMut;
use crate::model::Model;
use crate::{math, Error, Result, Tensor4};

/// Mean squared error over all elements and its gradient `2 (pred - target) / N`.
pub fn mse_loss(pred: &Tensor4, target: &Tensor4) -> Result<(f64, Tensor4)> {
    if pred.shape() != target.shape() {
        return Err(shape_err!(
            "mse_loss: prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        ));
    }
    let n = pred.len() as f64;
    let loss = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n;
    let grad = pred.zip_map(target, |p, t| 2.0 * (p - t) / n)?;
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam moments for a fixed list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    /// Zero moments for tensors of the given lengths.
    pub fn new(lengths: impl IntoIterator<Item = usize>) -> Self {
        Self::with_config(lengths, AdamConfig::default())
    }

    pub fn with_config(lengths: impl IntoIterator<Item = usize>, config: AdamConfig) -> Self {
        let (m, v) = lengths.into_iter().map(|n| (vec![0.0; n], vec![0.0; n])).unzip();
        AdamState { config, m, v, t: 0 }
    }

    pub fn for_model(model: &Model) -> Self {
        Self::new(model.params().iter().map(|p| p.values.len()))
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.m.iter().map(Vec::len).collect()
    }

    /// One bias-corrected Adam update,
    /// `theta -= lr * m_hat / (sqrt(v_hat) + eps)`.
    ///
    /// Gradients are checked for finiteness before anything is modified; a
    /// non-finite entry aborts the step and names the parameter.
    pub fn step(&mut self, params: &mut [ParamMut<'_>], grads: &[Vec<f64>], lr: f64) -> Result<()> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Argument(alloc::format!(
                "learning rate must be positive, got {lr}"
            )));
        }
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(shape_err!(
                "adam: state tracks {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            ));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.values.len() != m.len() || g.len() != m.len() {
                return Err(shape_err!(
                    "adam: `{}` has {} values, {} grads, state {}",
                    p.name,
                    p.values.len(),
                    g.len(),
                    m.len()
                ));
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    param: String::from(p.name.as_str()),
                });
            }
        }
        self.t += 1;
        let AdamConfig { beta1, beta2, epsilon } = self.config;
        let t = self.t as i32;
        let c1 = 1.0 - libm::pow(beta1, f64::from(t));
        let c2 = 1.0 - libm::pow(beta2, f64::from(t));
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((theta, &g), m), v) in p.values.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *theta -= lr * m_hat / (math::sqrt(v_hat) + epsilon);
            }
        }
        Ok(())
    }
}

/// `initial` before `drop_epoch`, `reduced` from `drop_epoch` (0-based) on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub initial: f64,
    pub reduced: f64,
    pub drop_epoch: u64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            initial: 1e-3,
            reduced: 1e-4,
            drop_epoch: 60,
        }
    }
}

impl LrSchedule {
    pub fn lr_at(&self, epoch: u64) -> f64 {
        if epoch < self.drop_epoch {
            self.initial
        } else {
            self.reduced
        }
    }
}

/// Forward, MSE against `label`, backward and one Adam step. Returns the loss
/// computed before the update.
pub fn train_step(model: &mut Model, adam: &mut AdamState, input: &Tensor4, label: &Tensor4, lr: f64) -> Result<f64> {
    let (pred, cache) = model.forward(input)?;
    let (loss, grad) = mse_loss(&pred, label)?;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { loss });
    }
    let (_, grads) = model.backward(&cache, &grad)?;
    let mut params = model.params_mut();
    adam.step(&mut params, &grads, lr)?;
    Ok(loss)
}
