//! Generative scattering networks.
//!
//! Images are mapped to translation-averaged scattering coefficients, the
//! coefficients are reduced and whitened with PCA, and a convolutional
//! decoder learns to map whitened coefficients back to images. New images
//! come from sampling whitened coefficients (independent Gaussians, a
//! fully-connected VAE or a fully-connected GAN) and decoding them.

pub mod error;
pub mod linalg;
pub mod tensor;

pub use error::{Error, Result};
pub mod latent;
pub mod nn;
pub mod pipeline;
pub mod scattering;
pub mod stats;
