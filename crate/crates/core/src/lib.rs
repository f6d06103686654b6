//! Multiscale dilated residual denoising network.
//!
//! This crate holds the numeric core: a rank-4 `f64` tensor, direct and
//! im2col dilated convolution, the layer zoo (convolution, batch
//! normalization, PReLU, the multiscale group and the residual HDC block),
//! hybrid-dilation analysis, the assembled denoiser with its checkpoint
//! encoding, the Adam optimizer, image patch/noise/augmentation utilities
//! and PSNR.
//!
//! It is `no_std` compatible (with `alloc`); disable the default `std`
//! feature to build without the standard library. File IO, the training
//! driver and the command line live in the `msdr` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod batch;
pub mod checkpoint;
pub mod conv;
mod error;
pub mod gradcheck;
pub mod hdc;
pub mod image;
pub mod layers;
mod math;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod rng;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Shape4, Tensor4};
