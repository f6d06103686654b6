use alloc::format;
use alloc::vec::Vec;

use rand_core::RngCore;

use super::{BatchNorm, BatchNormGrads, ConvLayer, ConvLayerGrads, Mode, PRelu, PReluGrads, Param, ParamMut};
use crate::conv::ConvSpec;
use crate::error::shape_err;
use crate::{Result, Tensor4};

/// Dilated convolution followed by batch normalization and PReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBnPrelu {
    pub conv: ConvLayer,
    pub bn: BatchNorm,
    pub act: PRelu,
}

/// Inputs to each stage of a [`ConvBnPrelu`], kept for backward.
#[derive(Debug, Clone)]
pub struct UnitCache {
    conv_in: Tensor4,
    bn_in: Tensor4,
    act_in: Tensor4,
}

impl UnitCache {
    /// Input of the activation, where the PReLU kinks sit.
    pub(crate) fn activation_input(&self) -> &Tensor4 {
        &self.act_in
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitGrads {
    pub conv: ConvLayerGrads,
    pub bn: BatchNormGrads,
    pub act: PReluGrads,
}

impl ConvBnPrelu {
    pub fn xavier(spec: ConvSpec, rng: &mut impl RngCore) -> Result<Self> {
        let c = spec.out_channels;
        Ok(ConvBnPrelu {
            conv: ConvLayer::xavier(spec, rng)?,
            bn: BatchNorm::new(c),
            act: PRelu::new(c),
        })
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.bn.mode = mode;
    }

    pub fn forward(&mut self, input: &Tensor4) -> Result<(Tensor4, UnitCache)> {
        let bn_in = self.conv.forward(input)?;
        let act_in = self.bn.forward(&bn_in)?;
        let out = self.act.forward(&act_in)?;
        Ok((
            out,
            UnitCache {
                conv_in: input.clone(),
                bn_in,
                act_in,
            },
        ))
    }

    /// Forward pass without touching BN running statistics.
    pub fn forward_frozen(&self, input: &Tensor4) -> Result<Tensor4> {
        let y = self.conv.forward(input)?;
        let y = self.bn.forward_frozen(&y)?;
        self.act.forward(&y)
    }

    pub fn backward(&self, cache: &UnitCache, grad_out: &Tensor4) -> Result<(Tensor4, UnitGrads)> {
        let (d, act) = self.act.backward(&cache.act_in, grad_out)?;
        let (d, bn) = self.bn.backward(&cache.bn_in, &d)?;
        let (d, conv) = self.conv.backward(&cache.conv_in, &d)?;
        Ok((d, UnitGrads { conv, bn, act }))
    }

    pub fn num_params(&self) -> usize {
        self.conv.num_params() + self.bn.num_params() + self.act.num_params()
    }

    pub fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<Param<'a>>) {
        self.conv.collect_params(&format!("{prefix}.conv"), out);
        self.bn.collect_params(&format!("{prefix}.bn"), out);
        self.act.collect_params(&format!("{prefix}.prelu"), out);
    }

    pub fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        self.conv.collect_params_mut(&format!("{prefix}.conv"), out);
        self.bn.collect_params_mut(&format!("{prefix}.bn"), out);
        self.act.collect_params_mut(&format!("{prefix}.prelu"), out);
    }
}

impl UnitGrads {
    pub fn append_to(self, out: &mut Vec<Vec<f64>>) {
        self.conv.append_to(out);
        self.bn.append_to(out);
        self.act.append_to(out);
    }
}

/// `y = x + F(x)`, where `F` chains [`ConvBnPrelu`] units whose dilation
/// rates form a hybrid dilation pattern (e.g. `[1, 2, 5]`).
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualHdcBlock {
    pub units: Vec<ConvBnPrelu>,
}

#[derive(Debug, Clone)]
pub struct BlockCache {
    units: Vec<UnitCache>,
}

impl BlockCache {
    pub(crate) fn units(&self) -> &[UnitCache] {
        &self.units
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockGrads {
    pub units: Vec<UnitGrads>,
}

impl ResidualHdcBlock {
    pub fn new(units: Vec<ConvBnPrelu>) -> Result<Self> {
        let first = units
            .first()
            .ok_or_else(|| crate::Error::Argument("residual block needs at least one unit".into()))?;
        let c = first.conv.spec().in_channels;
        let mut chain = c;
        for u in &units {
            if u.conv.spec().in_channels != chain {
                return Err(shape_err!(
                    "residual block channel chain broken: {} feeds a {}-channel conv",
                    chain,
                    u.conv.spec().in_channels
                ));
            }
            chain = u.conv.spec().out_channels;
        }
        if chain != c {
            return Err(shape_err!(
                "residual block maps {c} channels to {chain}; the identity shortcut needs them equal"
            ));
        }
        Ok(ResidualHdcBlock { units })
    }

    pub fn xavier(channels: usize, kernel: usize, dilations: &[usize], rng: &mut impl RngCore) -> Result<Self> {
        let units = dilations
            .iter()
            .map(|&r| ConvBnPrelu::xavier(ConvSpec::same(channels, channels, kernel, r)?, rng))
            .collect::<Result<Vec<_>>>()?;
        Self::new(units)
    }

    pub fn channels(&self) -> usize {
        self.units[0].conv.spec().in_channels
    }

    pub fn dilations(&self) -> Vec<usize> {
        self.units.iter().map(|u| u.conv.spec().dilation).collect()
    }

    pub fn set_mode(&mut self, mode: Mode) {
        for u in &mut self.units {
            u.set_mode(mode);
        }
    }

    fn check(&self, input: &Tensor4) -> Result<()> {
        if input.shape().c != self.channels() {
            return Err(shape_err!(
                "residual block expects {} channels, input has {}",
                self.channels(),
                input.shape().c
            ));
        }
        Ok(())
    }

    pub fn forward(&mut self, input: &Tensor4) -> Result<(Tensor4, BlockCache)> {
        self.check(input)?;
        let mut caches = Vec::with_capacity(self.units.len());
        let mut h = input.clone();
        for u in &mut self.units {
            let (next, cache) = u.forward(&h)?;
            caches.push(cache);
            h = next;
        }
        h.add_assign(input)?;
        Ok((h, BlockCache { units: caches }))
    }

    pub fn forward_frozen(&self, input: &Tensor4) -> Result<Tensor4> {
        self.check(input)?;
        let mut h = input.clone();
        for u in &self.units {
            h = u.forward_frozen(&h)?;
        }
        h.add_assign(input)?;
        Ok(h)
    }

    pub fn backward(&self, cache: &BlockCache, grad_out: &Tensor4) -> Result<(Tensor4, BlockGrads)> {
        let mut d = grad_out.clone();
        let mut grads = Vec::with_capacity(self.units.len());
        for (u, c) in self.units.iter().zip(&cache.units).rev() {
            let (next, g) = u.backward(c, &d)?;
            grads.push(g);
            d = next;
        }
        grads.reverse();
        d.add_assign(grad_out)?;
        Ok((d, BlockGrads { units: grads }))
    }

    pub fn num_params(&self) -> usize {
        self.units.iter().map(ConvBnPrelu::num_params).sum()
    }

    pub fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<Param<'a>>) {
        for (i, u) in self.units.iter().enumerate() {
            u.collect_params(&format!("{prefix}.unit{i}"), out);
        }
    }

    pub fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        for (i, u) in self.units.iter_mut().enumerate() {
            u.collect_params_mut(&format!("{prefix}.unit{i}"), out);
        }
    }
}

impl BlockGrads {
    pub fn append_to(self, out: &mut Vec<Vec<f64>>) {
        for g in self.units {
            g.append_to(out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    fn input(c: usize) -> Tensor4 {
        let mut g = crate::rng::Gaussian::new(stream(9, Purpose::Noise, 0, 0));
        let s = crate::Shape4::new(2, c, 7, 7);
        Tensor4::from_vec(s, (0..s.len()).map(|_| g.sample()).collect()).unwrap()
    }

    #[test]
    fn zero_residual_branch_is_identity() {
        let mut rng = stream(4, Purpose::Init, 0, 0);
        let mut block = ResidualHdcBlock::xavier(4, 3, &[1, 2, 5], &mut rng).unwrap();
        for u in &mut block.units {
            u.conv.weights.data_mut().fill(0.0);
        }
        let x = input(4);
        let (y, _) = block.forward(&x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn output_minus_input_is_the_unit_chain() {
        let mut rng = stream(5, Purpose::Init, 0, 0);
        let mut block = ResidualHdcBlock::xavier(4, 3, &[1, 2, 5], &mut rng).unwrap();
        let x = input(4);
        let mut standalone = x.clone();
        for u in block.units.clone().iter_mut() {
            standalone = u.forward(&standalone).unwrap().0;
        }
        let (y, _) = block.forward(&x).unwrap();
        let residual = y.sub(&x).unwrap();
        assert!(residual.max_abs_diff(&standalone).unwrap() < 1e-12);
    }

    #[test]
    fn shortcut_requires_matching_channels() {
        let mut rng = stream(6, Purpose::Init, 0, 0);
        let a = ConvBnPrelu::xavier(ConvSpec::same(4, 8, 3, 1).unwrap(), &mut rng).unwrap();
        assert!(ResidualHdcBlock::new(alloc::vec![a]).is_err());
        let mut block = ResidualHdcBlock::xavier(4, 3, &[1, 2, 5], &mut rng).unwrap();
        assert!(block.forward(&input(3)).is_err());
    }
}
