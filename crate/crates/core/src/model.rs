//! The eleven-layer multiscale dilated residual denoiser.
//!
//! Layout for the default configuration:
//!
//! 1. multiscale group (3x3 -> 12, 5x5 -> 20, 7x7 -> 32 filters, concatenated
//!    to 64 channels) followed by batch norm and PReLU;
//! 2. to 10. three residual HDC blocks, each three `[conv -> BN -> PReLU]`
//!    units with dilations `[1, 2, 5]` and an identity shortcut;
//! 11. a plain 3x3 convolution back to the image channels.
//!
//! The network predicts the residual (noise) `v = y - x`; the denoised image
//! is `y - R(y)`.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand_core::RngCore;

use crate::conv::ConvSpec;
use crate::error::shape_err;
use crate::hdc::{hdc_validate, receptive_field, DilationPattern};
use crate::layers::{
    BatchNorm, BlockCache, ConvLayer, FlatGrads, Mode, MultiscaleGroup, PRelu, Param, ParamMut, ResidualHdcBlock,
};
use crate::rng::{stream, Purpose};
use crate::{Error, Result, Tensor4};

/// Declarative description of the network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    /// 1 for gray, 3 for color.
    pub input_channels: usize,
    pub feature_channels: usize,
    /// Total layer count, `1 + num_blocks * block_dilations.len() + 1`.
    pub depth: usize,
    /// `(kernel, filters)` per multiscale branch.
    pub multiscale: Vec<(usize, usize)>,
    pub block_dilations: Vec<usize>,
    pub num_blocks: usize,
    pub block_kernel: usize,
    pub final_kernel: usize,
}

impl ModelConfig {
    pub fn gray() -> Self {
        ModelConfig {
            input_channels: 1,
            feature_channels: 64,
            depth: 11,
            multiscale: alloc::vec![(3, 12), (5, 20), (7, 32)],
            block_dilations: alloc::vec![1, 2, 5],
            num_blocks: 3,
            block_kernel: 3,
            final_kernel: 3,
        }
    }

    /// Same depth and width as [`gray`](Self::gray); only the image channels change.
    pub fn color() -> Self {
        ModelConfig {
            input_channels: 3,
            ..Self::gray()
        }
    }

    /// Two blocks, 8 feature channels. Small enough for exhaustive gradient checks.
    pub fn miniature(input_channels: usize) -> Self {
        ModelConfig {
            input_channels,
            feature_channels: 8,
            depth: 8,
            multiscale: alloc::vec![(3, 2), (5, 2), (7, 4)],
            num_blocks: 2,
            ..Self::gray()
        }
    }

    /// Two blocks, 16 feature channels; the desk-scale training configuration.
    pub fn reduced(input_channels: usize) -> Self {
        ModelConfig {
            input_channels,
            feature_channels: 16,
            depth: 8,
            multiscale: alloc::vec![(3, 4), (5, 4), (7, 8)],
            num_blocks: 2,
            ..Self::gray()
        }
    }

    pub fn expected_depth(&self) -> usize {
        1 + self.num_blocks * self.block_dilations.len() + 1
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.input_channels != 1 && self.input_channels != 3 {
            return fail(format!("input_channels must be 1 or 3, got {}", self.input_channels));
        }
        if self.multiscale.is_empty() {
            return fail("multiscale needs at least one (kernel, filters) branch".into());
        }
        for &(k, f) in &self.multiscale {
            if k == 0 || k % 2 == 0 || f == 0 {
                return fail(format!(
                    "multiscale branch ({k}, {f}) needs an odd kernel and filters >= 1"
                ));
            }
        }
        let filters: usize = self.multiscale.iter().map(|m| m.1).sum();
        if filters != self.feature_channels {
            return fail(format!(
                "multiscale filters sum to {filters} but feature_channels is {}",
                self.feature_channels
            ));
        }
        if self.num_blocks == 0 || self.block_dilations.is_empty() {
            return fail("need at least one residual block with at least one dilation".into());
        }
        if self.depth != self.expected_depth() {
            return fail(format!(
                "depth {} != 1 + num_blocks * len(block_dilations) + 1 = {}",
                self.depth,
                self.expected_depth()
            ));
        }
        for (name, k) in [("block_kernel", self.block_kernel), ("final_kernel", self.final_kernel)] {
            if k == 0 || k % 2 == 0 {
                return fail(format!("{name} must be odd, got {k}"));
            }
        }
        let pattern = DilationPattern::new(self.block_dilations.clone(), self.block_kernel.max(3))
            .map_err(|e| Error::Config(e.to_string()))?;
        let report = hdc_validate(&pattern);
        if !report.valid {
            return fail(format!(
                "block dilations {:?} fail the hybrid dilation check: M = {:?}, M_{} = {} > K = {}",
                self.block_dilations,
                report.gaps,
                report.failing_index.unwrap_or(2),
                report.checked_gap(),
                pattern.kernel()
            ));
        }
        Ok(())
    }

    /// `(kernel, dilation)` of the longest path through the network, for
    /// receptive-field purposes (the widest multiscale branch counts).
    pub fn layer_stack(&self) -> Vec<(usize, usize)> {
        let head_k = self.multiscale.iter().map(|m| m.0).max().unwrap_or(1);
        let mut layers = alloc::vec![(head_k, 1)];
        for _ in 0..self.num_blocks {
            layers.extend(self.block_dilations.iter().map(|&r| (self.block_kernel, r)));
        }
        layers.push((self.final_kernel, 1));
        layers
    }

    pub fn receptive_field(&self) -> Result<usize> {
        receptive_field(&self.layer_stack())
    }

    /// Canonical `key=value` text, one key per line in fixed order.
    pub fn to_canonical_text(&self) -> String {
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let ms = self
            .multiscale
            .iter()
            .map(|(k, f)| format!("{k}:{f}"))
            .collect::<Vec<_>>()
            .join(",");
        format!(
            "input_channels={}\nfeature_channels={}\ndepth={}\nmultiscale={}\nblock_dilations={}\nnum_blocks={}\nblock_kernel={}\nfinal_kernel={}\n",
            self.input_channels,
            self.feature_channels,
            self.depth,
            ms,
            list(&self.block_dilations),
            self.num_blocks,
            self.block_kernel,
            self.final_kernel
        )
    }

    pub fn from_canonical_text(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::Config(msg);
        let num = |key: &str, v: &str| -> Result<usize> {
            v.parse()
                .map_err(|_| bad(format!("`{key}`: `{v}` is not a non-negative integer")))
        };
        let mut fields: [Option<&str>; 8] = [None; 8];
        const KEYS: [&str; 8] = [
            "input_channels",
            "feature_channels",
            "depth",
            "multiscale",
            "block_dilations",
            "num_blocks",
            "block_kernel",
            "final_kernel",
        ];
        for line in text.lines().filter(|l| !l.is_empty()) {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("config line `{line}` is not key=value")))?;
            let slot = KEYS
                .iter()
                .position(|k| *k == key)
                .ok_or_else(|| bad(format!("unknown config key `{key}`")))?;
            if fields[slot].replace(value).is_some() {
                return Err(bad(format!("duplicate config key `{key}`")));
            }
        }
        let get = |i: usize| fields[i].ok_or_else(|| bad(format!("missing config key `{}`", KEYS[i])));
        let multiscale = get(3)?
            .split(',')
            .map(|pair| {
                let (k, f) = pair
                    .split_once(':')
                    .ok_or_else(|| bad(format!("multiscale entry `{pair}` is not kernel:filters")))?;
                Ok((num("multiscale", k)?, num("multiscale", f)?))
            })
            .collect::<Result<Vec<_>>>()?;
        let block_dilations = get(4)?
            .split(',')
            .map(|r| num("block_dilations", r))
            .collect::<Result<Vec<_>>>()?;
        let config = ModelConfig {
            input_channels: num(KEYS[0], get(0)?)?,
            feature_channels: num(KEYS[1], get(1)?)?,
            depth: num(KEYS[2], get(2)?)?,
            multiscale,
            block_dilations,
            num_blocks: num(KEYS[5], get(5)?)?,
            block_kernel: num(KEYS[6], get(6)?)?,
            final_kernel: num(KEYS[7], get(7)?)?,
        };
        config.validate()?;
        Ok(config)
    }
}

/// Learnable-parameter counts for one layer of the network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerCount {
    pub name: String,
    pub conv_weights: usize,
    pub conv_biases: usize,
    pub bn: usize,
    pub prelu: usize,
}

impl LayerCount {
    pub fn total(&self) -> usize {
        self.conv_weights + self.conv_biases + self.bn + self.prelu
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamCount {
    pub layers: Vec<LayerCount>,
}

impl ParamCount {
    pub fn total(&self) -> usize {
        self.layers.iter().map(LayerCount::total).sum()
    }
    pub fn conv_weights(&self) -> usize {
        self.layers.iter().map(|l| l.conv_weights).sum()
    }
    pub fn conv_biases(&self) -> usize {
        self.layers.iter().map(|l| l.conv_biases).sum()
    }
    pub fn bn(&self) -> usize {
        self.layers.iter().map(|l| l.bn).sum()
    }
    pub fn prelu(&self) -> usize {
        self.layers.iter().map(|l| l.prelu).sum()
    }
}

/// Activations saved by [`Model::forward`] for [`Model::backward`].
#[derive(Debug, Clone)]
pub struct ModelCache {
    head_in: Tensor4,
    head_bn_in: Tensor4,
    head_act_in: Tensor4,
    blocks: Vec<BlockCache>,
    tail_in: Tensor4,
}

impl ModelCache {
    /// Inputs of every PReLU in forward order.
    pub(crate) fn activation_inputs(&self) -> impl Iterator<Item = &Tensor4> {
        core::iter::once(&self.head_act_in).chain(
            self.blocks
                .iter()
                .flat_map(|b| b.units().iter().map(|u| u.activation_input())),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    pub head: MultiscaleGroup,
    pub head_bn: BatchNorm,
    pub head_act: PRelu,
    pub blocks: Vec<ResidualHdcBlock>,
    pub tail: ConvLayer,
    mode: Mode,
}

impl Model {
    /// Builds the network with Xavier-uniform convolution weights drawn in
    /// declaration order from the `Init` stream of `seed`; zero biases,
    /// gamma 1, beta 0, PReLU slopes 0.25. Starts in train mode.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(seed, Purpose::Init, 0, 0);
        Self::build_with(config, &mut rng)
    }

    fn build_with(config: &ModelConfig, rng: &mut impl RngCore) -> Result<Self> {
        let f = config.feature_channels;
        let head = MultiscaleGroup::xavier(config.input_channels, &config.multiscale, rng)?;
        let blocks = (0..config.num_blocks)
            .map(|_| ResidualHdcBlock::xavier(f, config.block_kernel, &config.block_dilations, rng))
            .collect::<Result<Vec<_>>>()?;
        let tail = ConvLayer::xavier(ConvSpec::same(f, config.input_channels, config.final_kernel, 1)?, rng)?;
        Ok(Model {
            config: config.clone(),
            head,
            head_bn: BatchNorm::new(f),
            head_act: PRelu::new(f),
            blocks,
            tail,
            mode: Mode::Train,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
        self.head_bn.mode = mode;
        for b in &mut self.blocks {
            b.set_mode(mode);
        }
    }

    fn check_input(&self, x: &Tensor4) -> Result<()> {
        if x.shape().c != self.config.input_channels {
            return Err(shape_err!(
                "model expects {} input channels, got {}",
                self.config.input_channels,
                x.shape().c
            ));
        }
        Ok(())
    }

    /// Predicted residual for `batch`, keeping activations for backward.
    /// Train mode normalizes with batch statistics and updates the running
    /// averages.
    pub fn forward(&mut self, batch: &Tensor4) -> Result<(Tensor4, ModelCache)> {
        self.check_input(batch)?;
        let head_bn_in = self.head.forward(batch)?;
        let head_act_in = self.head_bn.forward(&head_bn_in)?;
        let mut h = self.head_act.forward(&head_act_in)?;
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &mut self.blocks {
            let (next, cache) = b.forward(&h)?;
            blocks.push(cache);
            h = next;
        }
        let out = self.tail.forward(&h)?;
        Ok((
            out,
            ModelCache {
                head_in: batch.clone(),
                head_bn_in,
                head_act_in,
                blocks,
                tail_in: h,
            },
        ))
    }

    /// Predicted residual without caching or touching running statistics.
    pub fn predict(&self, batch: &Tensor4) -> Result<Tensor4> {
        self.check_input(batch)?;
        let h = self.head.forward(batch)?;
        let h = self.head_bn.forward_frozen(&h)?;
        let mut h = self.head_act.forward(&h)?;
        for b in &self.blocks {
            h = b.forward_frozen(&h)?;
        }
        self.tail.forward(&h)
    }

    /// Gradient of a scalar loss with respect to the input and every
    /// learnable tensor, given its gradient with respect to the output.
    /// Parameter gradients follow [`params`](Self::params) order.
    pub fn backward(&self, cache: &ModelCache, grad_out: &Tensor4) -> Result<(Tensor4, FlatGrads)> {
        let (mut d, tail_g) = self.tail.backward(&cache.tail_in, grad_out)?;
        let mut block_grads = Vec::with_capacity(self.blocks.len());
        for (b, c) in self.blocks.iter().zip(&cache.blocks).rev() {
            let (next, g) = b.backward(c, &d)?;
            block_grads.push(g);
            d = next;
        }
        block_grads.reverse();
        let (d, act_g) = self.head_act.backward(&cache.head_act_in, &d)?;
        let (d, bn_g) = self.head_bn.backward(&cache.head_bn_in, &d)?;
        let (d, head_g) = self.head.backward(&cache.head_in, &d)?;

        let mut flat = Vec::new();
        head_g.append_to(&mut flat);
        bn_g.append_to(&mut flat);
        act_g.append_to(&mut flat);
        for g in block_grads {
            g.append_to(&mut flat);
        }
        tail_g.append_to(&mut flat);
        Ok((d, flat))
    }

    /// Denoised image `clamp(y - R(y), 0, 1)`. Requires infer mode.
    pub fn denoise(&self, noisy: &Tensor4) -> Result<Tensor4> {
        if self.mode != Mode::Infer {
            return Err(Error::Mode(
                "denoise needs an infer-mode model; train mode would normalize with batch statistics".into(),
            ));
        }
        let residual = self.predict(noisy)?;
        noisy.zip_map(&residual, |y, r| (y - r).clamp(0.0, 1.0))
    }

    /// Learnable tensors in declaration order.
    pub fn params(&self) -> Vec<Param<'_>> {
        let mut out = Vec::new();
        self.head.collect_params("head.multiscale", &mut out);
        self.head_bn.collect_params("head.bn", &mut out);
        self.head_act.collect_params("head.prelu", &mut out);
        for (i, b) in self.blocks.iter().enumerate() {
            b.collect_params(&format!("blocks.{i}"), &mut out);
        }
        self.tail.collect_params("tail", &mut out);
        out
    }

    pub fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        let mut out = Vec::new();
        self.head.collect_params_mut("head.multiscale", &mut out);
        self.head_bn.collect_params_mut("head.bn", &mut out);
        self.head_act.collect_params_mut("head.prelu", &mut out);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.collect_params_mut(&format!("blocks.{i}"), &mut out);
        }
        self.tail.collect_params_mut("tail", &mut out);
        out
    }

    /// Batch-norm running statistics in declaration order.
    pub fn buffers(&self) -> Vec<Param<'_>> {
        let mut out = Vec::new();
        self.head_bn.collect_buffers("head.bn", &mut out);
        for (i, b) in self.blocks.iter().enumerate() {
            for (j, u) in b.units.iter().enumerate() {
                u.bn.collect_buffers(&format!("blocks.{i}.unit{j}.bn"), &mut out);
            }
        }
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<ParamMut<'_>> {
        let mut out = Vec::new();
        self.head_bn.collect_buffers_mut("head.bn", &mut out);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            for (j, u) in b.units.iter_mut().enumerate() {
                u.bn.collect_buffers_mut(&format!("blocks.{i}.unit{j}.bn"), &mut out);
            }
        }
        out
    }

    /// Per-layer learnable parameter counts; BN running statistics excluded.
    pub fn count_params(&self) -> ParamCount {
        let mut layers = Vec::new();
        layers.push(LayerCount {
            name: "head".into(),
            conv_weights: self.head.branches.iter().map(ConvLayer::num_weights).sum(),
            conv_biases: self.head.branches.iter().map(|b| b.bias.len()).sum(),
            bn: self.head_bn.num_params(),
            prelu: self.head_act.num_params(),
        });
        for (i, b) in self.blocks.iter().enumerate() {
            for (j, u) in b.units.iter().enumerate() {
                layers.push(LayerCount {
                    name: format!("blocks.{i}.unit{j}"),
                    conv_weights: u.conv.num_weights(),
                    conv_biases: u.conv.bias.len(),
                    bn: u.bn.num_params(),
                    prelu: u.act.num_params(),
                });
            }
        }
        layers.push(LayerCount {
            name: "tail".into(),
            conv_weights: self.tail.num_weights(),
            conv_biases: self.tail.bias.len(),
            bn: 0,
            prelu: 0,
        });
        ParamCount { layers }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Shape4;

    #[test]
    fn default_configs_validate() {
        ModelConfig::gray().validate().unwrap();
        ModelConfig::color().validate().unwrap();
        ModelConfig::miniature(1).validate().unwrap();
        ModelConfig::reduced(3).validate().unwrap();
    }

    #[test]
    fn invalid_configs_name_the_violation() {
        let mut c = ModelConfig::gray();
        c.multiscale[0].1 = 10;
        assert!(matches!(c.validate(), Err(Error::Config(m)) if m.contains("sum to 62")));

        let mut c = ModelConfig::gray();
        c.depth = 12;
        assert!(matches!(c.validate(), Err(Error::Config(m)) if m.contains("depth")));

        let mut c = ModelConfig::gray();
        c.block_dilations = alloc::vec![1, 2, 9];
        assert!(matches!(c.validate(), Err(Error::Config(m)) if m.contains("M_2 = 5")));

        let mut c = ModelConfig::gray();
        c.input_channels = 2;
        assert!(c.validate().is_err());
    }

    #[test]
    fn canonical_text_roundtrip() {
        for c in [ModelConfig::gray(), ModelConfig::color(), ModelConfig::miniature(3)] {
            assert_eq!(ModelConfig::from_canonical_text(&c.to_canonical_text()).unwrap(), c);
        }
        assert!(ModelConfig::from_canonical_text("input_channels=1\n").is_err());
        let extra = alloc::format!("{}bogus=1\n", ModelConfig::gray().to_canonical_text());
        assert!(ModelConfig::from_canonical_text(&extra).is_err());
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = Model::build(&ModelConfig::miniature(1), 17).unwrap();
        let b = Model::build(&ModelConfig::miniature(1), 17).unwrap();
        let c = Model::build(&ModelConfig::miniature(1), 18).unwrap();
        let bits = |m: &Model| -> Vec<u64> {
            m.params()
                .iter()
                .flat_map(|p| p.values.iter().map(|v| v.to_bits()))
                .collect()
        };
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(bits(&a), bits(&c));
    }

    #[test]
    fn gray_model_maps_patch_to_same_shape() {
        let mut m = Model::build(&ModelConfig::gray(), 1).unwrap();
        let x = Tensor4::full((1, 1, 45, 45), 0.5).unwrap();
        let (y, _) = m.forward(&x).unwrap();
        assert_eq!(y.shape(), Shape4::new(1, 1, 45, 45));
    }

    #[test]
    fn color_model_takes_three_channels() {
        let m = Model::build(&ModelConfig::color(), 1).unwrap();
        let x = Tensor4::full((1, 3, 12, 12), 0.5).unwrap();
        assert_eq!(m.predict(&x).unwrap().shape(), Shape4::new(1, 3, 12, 12));
        assert!(m.predict(&Tensor4::full((1, 1, 12, 12), 0.5).unwrap()).is_err());
    }

    #[test]
    fn parameter_counts() {
        let gray = Model::build(&ModelConfig::gray(), 0).unwrap().count_params();
        assert_eq!(gray.conv_weights(), 334_528);
        assert_eq!(gray.layers[0].conv_weights, 2_176);
        assert_eq!(gray.conv_biases(), 64 + 9 * 64 + 1);
        assert_eq!(gray.bn(), 10 * 128);
        assert_eq!(gray.prelu(), 10 * 64);
        let color = Model::build(&ModelConfig::color(), 0).unwrap().count_params();
        assert_eq!(color.conv_weights(), 340_032);
        for (count, table) in [(gray.total(), 3.3e5), (color.total(), 3.4e5)] {
            assert!((count as f64 - table).abs() / table <= 0.05, "{count} vs {table}");
        }
    }

    #[test]
    fn receptive_field_of_full_model() {
        assert_eq!(ModelConfig::gray().receptive_field().unwrap(), 57);
    }

    #[test]
    fn zero_tail_predicts_zero_residual() {
        let mut m = Model::build(&ModelConfig::miniature(1), 3).unwrap();
        m.tail.weights.data_mut().fill(0.0);
        let x = Tensor4::from_vec((1, 1, 9, 9), (0..81).map(|i| f64::from(i) / 81.0).collect()).unwrap();
        assert!(m.predict(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn denoise_requires_infer_mode() {
        let mut m = Model::build(&ModelConfig::miniature(1), 3).unwrap();
        let x = Tensor4::full((1, 1, 8, 8), 0.5).unwrap();
        assert!(matches!(m.denoise(&x), Err(Error::Mode(_))));
        m.set_mode(Mode::Infer);
        assert!(m.denoise(&x).is_ok());
    }

    #[test]
    fn infer_mode_is_deterministic_and_leaves_stats() {
        let mut m = Model::build(&ModelConfig::miniature(1), 3).unwrap();
        m.set_mode(Mode::Infer);
        let x = Tensor4::from_vec((2, 1, 8, 8), (0..128).map(|i| (f64::from(i) * 0.37).sin()).collect()).unwrap();
        let before = m.clone();
        let (a, _) = m.forward(&x).unwrap();
        let (b, _) = m.forward(&x).unwrap();
        assert_eq!(a, b);
        assert_eq!(m, before);
        assert_eq!(m.predict(&x).unwrap(), a);
    }

    #[test]
    fn rigged_residual_is_inverted_exactly() {
        // Tail with zero weights and bias c outputs the constant residual c.
        let mut m = Model::build(&ModelConfig::miniature(1), 3).unwrap();
        m.set_mode(Mode::Infer);
        m.tail.weights.data_mut().fill(0.0);
        m.tail.bias[0] = 0.125;
        let clean = Tensor4::from_vec((1, 1, 6, 6), (0..36).map(|i| 0.2 + f64::from(i) / 60.0).collect()).unwrap();
        let noisy = clean.map(|v| v + 0.125);
        let restored = m.denoise(&noisy).unwrap();
        assert!(restored.max_abs_diff(&clean).unwrap() < 1e-15);
    }
}
