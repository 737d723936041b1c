//! Wavelet-latent variational autoencoder at desk scale.
//!
//! The crate provides exact multi-level Haar analysis/synthesis for signals
//! and images, reparameterized latents (a wavelet-coefficient latent with a
//! learnable noise scale, and a diagonal-Gaussian baseline), hand-verified
//! reverse-mode gradients through the whole computation, a small optimizer,
//! reconstruction metrics, and a training harness with a thin CLI.

pub mod adam;
pub mod data;
pub mod error;
pub mod eval;
pub mod format;
pub mod heatmap;
pub mod image;
pub mod latent;
pub mod net;
pub mod train;
pub mod wavelet;

pub use error::{Error, Result};
