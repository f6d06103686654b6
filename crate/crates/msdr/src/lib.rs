//! Files, training loop and command-line front end for the multiscale
//! dilated residual denoiser in [`msdr_core`].

pub mod ckpt;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod error;
pub mod evaluate;
pub mod pnm;
pub mod train;

pub use error::{AppError, AppResult};
