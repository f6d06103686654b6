//! Layers of the denoiser with forward and backward passes.
//!
//! Primitive layers ([`ConvLayer`], [`BatchNorm`], [`PRelu`],
//! [`MultiscaleGroup`]) compute their backward pass from the cached forward
//! input alone. Composite layers ([`ConvBnPrelu`], [`ResidualHdcBlock`])
//! return a cache object from `forward` that `backward` consumes.
//!
//! Learnable parameters are exposed in a fixed declaration order through
//! `collect_params`/`collect_params_mut`, and every `*Grads` type flattens
//! into the same order with `append_to`.

mod batchnorm;
mod conv_layer;
mod multiscale;
mod prelu;
mod residual;

use alloc::string::String;
use alloc::vec::Vec;

pub use batchnorm::{BatchNorm, BatchNormGrads, BN_EPSILON, BN_MOMENTUM};
pub use conv_layer::{ConvLayer, ConvLayerGrads};
pub use multiscale::{MultiscaleGrads, MultiscaleGroup};
pub use prelu::{PRelu, PReluGrads, PRELU_INIT_SLOPE};
pub use residual::{BlockCache, BlockGrads, ConvBnPrelu, ResidualHdcBlock, UnitCache, UnitGrads};

/// Whether batch normalization uses batch statistics (and updates its
/// running averages) or the stored running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Train,
    Infer,
}

/// A named, read-only view of one learnable tensor.
#[derive(Debug)]
pub struct Param<'a> {
    pub name: String,
    pub values: &'a [f64],
}

/// A named, mutable view of one learnable tensor (or a non-learnable buffer).
#[derive(Debug)]
pub struct ParamMut<'a> {
    pub name: String,
    pub values: &'a mut [f64],
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        String::from(name)
    } else {
        alloc::format!("{prefix}.{name}")
    }
}

/// Flattened gradients, one buffer per learnable tensor in declaration order.
pub type FlatGrads = Vec<Vec<f64>>;
