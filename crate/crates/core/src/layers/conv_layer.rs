use alloc::vec;
use alloc::vec::Vec;

use rand_core::RngCore;

use super::{join, Param, ParamMut};
use crate::conv::{conv2d_backward, conv2d_forward, conv2d_naive, ConvSpec};
use crate::error::shape_err;
use crate::{rng, Result, Tensor4};

/// Same-padded dilated convolution with bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    spec: ConvSpec,
    pub weights: Tensor4,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayerGrads {
    pub weights: Tensor4,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    /// Zero-initialized layer. Fails unless the spec is same-padded.
    pub fn zeros(spec: ConvSpec) -> Result<Self> {
        spec.validate()?;
        if !spec.is_same_padded() {
            return Err(shape_err!(
                "conv layer requires same padding r*(K-1)/2 = {}, got {}",
                spec.dilation * (spec.kernel - 1) / 2,
                spec.padding
            ));
        }
        Ok(ConvLayer {
            weights: Tensor4::zeros(spec.weight_shape())?,
            bias: vec![0.0; spec.out_channels],
            spec,
        })
    }

    pub fn from_parts(spec: ConvSpec, weights: Tensor4, bias: Vec<f64>) -> Result<Self> {
        let mut layer = Self::zeros(spec)?;
        if weights.shape() != spec.weight_shape() || bias.len() != spec.out_channels {
            return Err(shape_err!(
                "conv parameters {:?}/{} do not match spec {:?}",
                weights.shape(),
                bias.len(),
                spec
            ));
        }
        layer.weights = weights;
        layer.bias = bias;
        Ok(layer)
    }

    /// Xavier-uniform weights, bound `sqrt(6 / (fan_in + fan_out))` with
    /// `fan = channels * K * K`; zero bias.
    pub fn xavier(spec: ConvSpec, rng: &mut impl RngCore) -> Result<Self> {
        let mut layer = Self::zeros(spec)?;
        let kk = (spec.kernel * spec.kernel) as f64;
        let fan_in = spec.in_channels as f64 * kk;
        let fan_out = spec.out_channels as f64 * kk;
        let bound = crate::math::sqrt(6.0 / (fan_in + fan_out));
        for w in layer.weights.data_mut() {
            *w = (2.0 * rng::uniform(rng) - 1.0) * bound;
        }
        Ok(layer)
    }

    pub fn spec(&self) -> &ConvSpec {
        &self.spec
    }

    pub fn forward(&self, input: &Tensor4) -> Result<Tensor4> {
        conv2d_forward(input, &self.weights, &self.bias, &self.spec)
    }

    /// Reference path through the direct-loop convolution.
    pub fn forward_naive(&self, input: &Tensor4) -> Result<Tensor4> {
        conv2d_naive(input, &self.weights, &self.bias, &self.spec)
    }

    pub fn backward(&self, input: &Tensor4, grad_out: &Tensor4) -> Result<(Tensor4, ConvLayerGrads)> {
        let g = conv2d_backward(input, &self.weights, &self.spec, grad_out)?;
        Ok((
            g.input,
            ConvLayerGrads {
                weights: g.weights,
                bias: g.bias,
            },
        ))
    }

    pub fn num_weights(&self) -> usize {
        self.weights.len()
    }

    pub fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<Param<'a>>) {
        out.push(Param {
            name: join(prefix, "weight"),
            values: self.weights.data(),
        });
        out.push(Param {
            name: join(prefix, "bias"),
            values: &self.bias,
        });
    }

    pub fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        out.push(ParamMut {
            name: join(prefix, "weight"),
            values: self.weights.data_mut(),
        });
        out.push(ParamMut {
            name: join(prefix, "bias"),
            values: &mut self.bias,
        });
    }
}

impl ConvLayerGrads {
    pub fn append_to(self, out: &mut Vec<Vec<f64>>) {
        out.push(self.weights.into_vec());
        out.push(self.bias);
    }
}
