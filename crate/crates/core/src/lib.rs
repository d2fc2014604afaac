//! Data augmentation with deep convolutional GANs for surface-defect image
//! classification.
//!
//! - [`tensor`]: reverse-mode autodiff, convolution layers, Adam.
//! - [`data`]: images, cropping, splits, classical augmentation, synthetic data.
//! - [`gan`]: generator/discriminator, alternating training, checkpoints.
//! - [`eval`]: Fréchet distance, t-SNE, image grids, blinded sheets.
//! - [`classifier`]: the CNN classifier and its metrics.
//! - [`experiment`]: the six classification tasks, comparisons and sweeps.

pub mod classifier;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod gan;
pub mod rng;
pub mod tensor;

pub use config::Settings;
pub use error::{Error, Result};
pub use rng::RngStream;
pub use tensor::{Graph, Mode, Parameter, Tensor, Var};
