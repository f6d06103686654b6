use alloc::format;
use alloc::vec::Vec;

use rand_core::RngCore;

use super::{ConvLayer, ConvLayerGrads, Param, ParamMut};
use crate::conv::ConvSpec;
use crate::error::shape_err;
use crate::{Error, Result, Tensor4};

/// Parallel same-padded convolutions of different kernel sizes whose
/// outputs are concatenated along the channel axis, branch 0 first.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiscaleGroup {
    pub branches: Vec<ConvLayer>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiscaleGrads {
    pub branches: Vec<ConvLayerGrads>,
}

impl MultiscaleGroup {
    pub fn new(branches: Vec<ConvLayer>) -> Result<Self> {
        let first = branches
            .first()
            .ok_or_else(|| Error::Argument("multiscale group needs at least one branch".into()))?;
        let in_c = first.spec().in_channels;
        if let Some(b) = branches.iter().find(|b| b.spec().in_channels != in_c) {
            return Err(shape_err!(
                "multiscale branches disagree on input channels: {} vs {}",
                in_c,
                b.spec().in_channels
            ));
        }
        Ok(MultiscaleGroup { branches })
    }

    /// Xavier-initialized group with one `(kernel, filters)` branch per entry.
    pub fn xavier(in_channels: usize, scales: &[(usize, usize)], rng: &mut impl RngCore) -> Result<Self> {
        let branches = scales
            .iter()
            .map(|&(k, f)| ConvLayer::xavier(ConvSpec::same(in_channels, f, k, 1)?, rng))
            .collect::<Result<Vec<_>>>()?;
        Self::new(branches)
    }

    pub fn in_channels(&self) -> usize {
        self.branches[0].spec().in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.branches.iter().map(|b| b.spec().out_channels).sum()
    }

    fn split_sizes(&self) -> Vec<usize> {
        self.branches.iter().map(|b| b.spec().out_channels).collect()
    }

    pub fn forward(&self, input: &Tensor4) -> Result<Tensor4> {
        let outs = self
            .branches
            .iter()
            .map(|b| b.forward(input))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Tensor4> = outs.iter().collect();
        Tensor4::concat_channels(&refs)
    }

    pub fn backward(&self, input: &Tensor4, grad_out: &Tensor4) -> Result<(Tensor4, MultiscaleGrads)> {
        let parts = grad_out.split_channels(&self.split_sizes())?;
        let mut grad_in: Option<Tensor4> = None;
        let mut grads = Vec::with_capacity(self.branches.len());
        for (branch, dy) in self.branches.iter().zip(&parts) {
            let (dx, g) = branch.backward(input, dy)?;
            match grad_in.as_mut() {
                None => grad_in = Some(dx),
                Some(acc) => acc.add_assign(&dx)?,
            }
            grads.push(g);
        }
        Ok((
            grad_in.expect("at least one branch"),
            MultiscaleGrads { branches: grads },
        ))
    }

    pub fn num_params(&self) -> usize {
        self.branches.iter().map(ConvLayer::num_params).sum()
    }

    pub fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<Param<'a>>) {
        for (i, b) in self.branches.iter().enumerate() {
            b.collect_params(&format!("{prefix}.branch{i}"), out);
        }
    }

    pub fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        for (i, b) in self.branches.iter_mut().enumerate() {
            b.collect_params_mut(&format!("{prefix}.branch{i}"), out);
        }
    }
}

impl MultiscaleGrads {
    pub fn append_to(self, out: &mut Vec<Vec<f64>>) {
        for g in self.branches {
            g.append_to(out);
        }
    }
}
