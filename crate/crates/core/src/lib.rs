//! Latent-space adversarial example generation.
//!
//! An input image is encoded into a latent, DDIM-inverted for a few steps,
//! perturbed under a growing L∞ radius and denoised back, with
//! transform, ensemble and momentum strategies plugged into the
//! optimization loop. Everything runs on a small dense-tensor
//! reverse-mode engine in 64-bit floats.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attack;
pub mod autodiff;
pub mod data;
pub mod diffusion;
pub mod error;
pub mod metrics;
pub mod models;
pub mod pipeline;
pub mod report;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
