//! DCGAN generator/discriminator, alternating training, sampling,
//! checkpoints and latent interpolation.

mod checkpoint;
mod interp;
mod nets;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use interp::{crossfade_pixels, interpolate_latent};
pub use nets::{Discriminator, Generator};
pub use train::{
    discriminator_step, generator_step, prepare_real, run_loop, sample, sample_latents, train_gan, train_gan_with,
    write_loss_history, Checkpoint, LossRecord, NoObserver, StepKind, TrainObserver,
};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::hash_str;

/// Training and architecture settings. Defaults follow the pitting row of
/// the reference hyperparameters at 96×96 RGB.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GanConfig {
    pub batch_size: usize,
    pub training_loops: usize,
    pub k_d: usize,
    pub k_g: usize,
    pub latent_size: usize,
    pub lr: f32,
    pub beta1: f32,
    pub noise_layer: bool,
    pub noise_sigma: f32,
    pub real_label: f32,
    pub fake_label: f32,
    pub seed: u64,
    /// Save a snapshot every this many loops (0 disables periodic saves).
    pub checkpoint_every: usize,
    pub grayscale: bool,
    /// Reuse one real batch for all `k_d` discriminator steps of a loop.
    pub reuse_batch_per_loop: bool,
    pub image_size: usize,
    /// Channels of the reshaped dense output followed by each hidden
    /// transposed convolution; the spatial base is `image_size / 2^len`.
    pub gen_channels: Vec<usize>,
    pub gen_kernel: usize,
    pub disc_channels: Vec<usize>,
    pub disc_kernels: Vec<usize>,
    pub disc_strides: Vec<usize>,
    pub leaky_slope: f32,
    pub dropout: f32,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            batch_size: 50,
            training_loops: 30_000,
            k_d: 4,
            k_g: 3,
            latent_size: 100,
            lr: 0.0002,
            beta1: 0.5,
            noise_layer: true,
            noise_sigma: 0.05,
            real_label: 1.0,
            fake_label: 0.0,
            seed: 0,
            checkpoint_every: 1000,
            grayscale: false,
            reuse_batch_per_loop: false,
            image_size: 96,
            gen_channels: vec![1024, 512, 256, 128],
            gen_kernel: 4,
            disc_channels: vec![32, 64, 128, 256],
            disc_kernels: vec![5, 5, 3, 3],
            disc_strides: vec![1, 2, 2, 2],
            leaky_slope: 0.2,
            dropout: 0.25,
        }
    }
}

impl GanConfig {
    /// Settings of the rust row: one-sided smoothing with 0.85 / 0.15.
    pub fn rust() -> Self {
        Self {
            real_label: 0.85,
            fake_label: 0.15,
            ..Self::default()
        }
    }

    /// Reduced 16×16 grayscale network used for fast convergence tests.
    pub fn toy() -> Self {
        Self {
            training_loops: 2000,
            grayscale: true,
            image_size: 16,
            gen_channels: vec![32, 16],
            disc_channels: vec![8, 16],
            disc_kernels: vec![5, 3],
            disc_strides: vec![2, 2],
            latent_size: 16,
            noise_layer: false,
            checkpoint_every: 0,
            ..Self::default()
        }
    }

    pub fn channels(&self) -> usize {
        if self.grayscale {
            1
        } else {
            3
        }
    }

    /// Spatial side of the generator's reshaped dense output.
    pub fn gen_base(&self) -> usize {
        self.image_size >> self.gen_channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_d == 0 || self.k_g == 0 {
            return Err(invalid!("k_d and k_g must be >= 1"));
        }
        if !(0.0 <= self.fake_label && self.fake_label < self.real_label && self.real_label <= 1.0) {
            return Err(invalid!(
                "labels must satisfy 0 <= fake < real <= 1, got real {} fake {}",
                self.real_label,
                self.fake_label
            ));
        }
        if self.batch_size < 2 {
            return Err(invalid!("batch_size must be >= 2 for batch normalization"));
        }
        if self.latent_size == 0 {
            return Err(invalid!("latent_size must be positive"));
        }
        if self.gen_channels.is_empty() || self.disc_channels.is_empty() {
            return Err(invalid!("channel lists must be nonempty"));
        }
        if self.disc_kernels.len() != self.disc_channels.len() || self.disc_strides.len() != self.disc_channels.len() {
            return Err(invalid!("disc_channels, disc_kernels and disc_strides must have equal length"));
        }
        let base = self.gen_base();
        if base == 0 || base << self.gen_channels.len() != self.image_size {
            return Err(invalid!(
                "image_size {} is not divisible by 2^{}",
                self.image_size,
                self.gen_channels.len()
            ));
        }
        if self.gen_kernel < 2 || !self.gen_kernel.is_multiple_of(2) {
            return Err(invalid!("gen_kernel must be even and >= 2 for exact doubling"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(invalid!("dropout must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Hash of every setting that affects the networks or the update rule.
    /// Loop budget, cadence and seed are excluded so a run can be resumed
    /// with a longer budget.
    pub fn fingerprint(&self) -> u64 {
        let key = Self {
            training_loops: 0,
            checkpoint_every: 0,
            seed: 0,
            ..self.clone()
        };
        hash_str(&serde_json::to_string(&key).expect("config serializes"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_table() {
        let c = GanConfig::default();
        assert_eq!((c.batch_size, c.training_loops, c.k_d, c.k_g, c.latent_size), (50, 30000, 4, 3, 100));
        assert_eq!((c.real_label, c.fake_label), (1.0, 0.0));
        let r = GanConfig::rust();
        assert_eq!((r.real_label, r.fake_label), (0.85, 0.15));
        assert_eq!(c.gen_base(), 6);
        c.validate().unwrap();
        GanConfig::toy().validate().unwrap();
    }

    #[test]
    fn label_and_step_validation() {
        let mut c = GanConfig { k_d: 0, ..GanConfig::default() };
        assert!(c.validate().is_err());
        c.k_d = 1;
        c.real_label = 0.1;
        c.fake_label = 0.2;
        assert!(c.validate().is_err());
    }

    #[test]
    fn fingerprint_ignores_budget() {
        let a = GanConfig::default();
        let b = GanConfig { training_loops: 5, seed: 9, ..a.clone() };
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), GanConfig::rust().fingerprint());
    }
}
