use super::GanConfig;
use crate::error::Result;
use crate::rng::RngStream;
use crate::tensor::layers::{scoped, BatchNorm, Conv2d, ConvTranspose2d, Dense, Module};
use crate::tensor::{conv_output_size, BatchNormStats, Graph, Mode, Parameter, Var};

/// Dense + reshape, then (transposed conv, BN, ReLU) blocks, then a final
/// transposed conv with tanh.
#[derive(Clone, Debug)]
pub struct Generator {
    pub dense: Dense,
    pub deconvs: Vec<ConvTranspose2d>,
    pub norms: Vec<BatchNorm>,
    latent_size: usize,
    base: usize,
    base_channels: usize,
}

impl Generator {
    pub fn new(cfg: &GanConfig, rng: &mut RngStream) -> Result<Self> {
        cfg.validate()?;
        let base = cfg.gen_base();
        let c0 = cfg.gen_channels[0];
        let dense = Dense::new(cfg.latent_size, base * base * c0, rng);
        let mut deconvs = Vec::new();
        let mut norms = Vec::new();
        let pad = (cfg.gen_kernel - 2) / 2;
        for (i, &cin) in cfg.gen_channels.iter().enumerate() {
            let last = i + 1 == cfg.gen_channels.len();
            let cout = if last { cfg.channels() } else { cfg.gen_channels[i + 1] };
            deconvs.push(ConvTranspose2d::new(cin, cout, cfg.gen_kernel, 2, pad, rng));
            if !last {
                norms.push(BatchNorm::new(cout));
            }
        }
        Ok(Self {
            dense,
            deconvs,
            norms,
            latent_size: cfg.latent_size,
            base,
            base_channels: c0,
        })
    }

    pub fn latent_size(&self) -> usize {
        self.latent_size
    }

    /// `z: (N, latent)` to images `(N, C, H, W)` in [−1, 1].
    pub fn forward(&mut self, g: &mut Graph, z: Var, mode: Mode) -> Result<Var> {
        let n = g.shape(z)[0];
        let h = self.dense.forward(g, z)?;
        let mut h = g.reshape(h, &[n, self.base_channels, self.base, self.base])?;
        let blocks = self.deconvs.len();
        for i in 0..blocks {
            h = self.deconvs[i].forward(g, h)?;
            if i + 1 < blocks {
                h = self.norms[i].forward(g, h, mode)?;
                h = g.relu(h)?;
            }
        }
        g.tanh(h)
    }
}

impl Module for Generator {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(String, &'a Parameter)) {
        self.dense.visit_params(&mut |n, p| f(scoped("dense", n), p));
        for (i, d) in self.deconvs.iter().enumerate() {
            d.visit_params(&mut |n, p| f(scoped(&format!("deconv{i}"), n), p));
        }
        for (i, b) in self.norms.iter().enumerate() {
            b.visit_params(&mut |n, p| f(scoped(&format!("bn{i}"), n), p));
        }
    }

    fn visit_params_mut<'a>(&'a mut self, f: &mut dyn FnMut(String, &'a mut Parameter)) {
        self.dense.visit_params_mut(&mut |n, p| f(scoped("dense", n), p));
        for (i, d) in self.deconvs.iter_mut().enumerate() {
            d.visit_params_mut(&mut |n, p| f(scoped(&format!("deconv{i}"), n), p));
        }
        for (i, b) in self.norms.iter_mut().enumerate() {
            b.visit_params_mut(&mut |n, p| f(scoped(&format!("bn{i}"), n), p));
        }
    }

    fn visit_stats<'a>(&'a self, f: &mut dyn FnMut(String, &'a BatchNormStats)) {
        for (i, b) in self.norms.iter().enumerate() {
            b.visit_stats(&mut |n, s| f(scoped(&format!("bn{i}"), n), s));
        }
    }

    fn visit_stats_mut<'a>(&'a mut self, f: &mut dyn FnMut(String, &'a mut BatchNormStats)) {
        for (i, b) in self.norms.iter_mut().enumerate() {
            b.visit_stats_mut(&mut |n, s| f(scoped(&format!("bn{i}"), n), s));
        }
    }
}

/// Optional input noise, strided convs with LeakyReLU and dropout (BN on all
/// but the first), then a single-logit dense head with sigmoid.
#[derive(Clone, Debug)]
pub struct Discriminator {
    pub convs: Vec<Conv2d>,
    pub norms: Vec<BatchNorm>,
    pub head: Dense,
    noise_sigma: Option<f32>,
    leaky_slope: f32,
    dropout: f32,
}

impl Discriminator {
    pub fn new(cfg: &GanConfig, rng: &mut RngStream) -> Result<Self> {
        cfg.validate()?;
        let mut convs = Vec::new();
        let mut norms = Vec::new();
        let mut cin = cfg.channels();
        let mut side = cfg.image_size;
        for (i, &cout) in cfg.disc_channels.iter().enumerate() {
            let k = cfg.disc_kernels[i];
            let s = cfg.disc_strides[i];
            let pad = k / 2;
            side = conv_output_size(side, k, s, pad)?;
            convs.push(Conv2d::new(cin, cout, k, s, pad, rng));
            if i > 0 {
                norms.push(BatchNorm::new(cout));
            }
            cin = cout;
        }
        let head = Dense::new(side * side * cin, 1, rng);
        Ok(Self {
            convs,
            norms,
            head,
            noise_sigma: cfg.noise_layer.then_some(cfg.noise_sigma),
            leaky_slope: cfg.leaky_slope,
            dropout: cfg.dropout,
        })
    }

    /// Flattened feature width feeding the dense head.
    pub fn flatten_size(&self) -> usize {
        self.head.weight.value.shape()[0]
    }

    /// Images `(N, C, H, W)` in [−1, 1] to probabilities `(N, 1)`.
    pub fn forward(&mut self, g: &mut Graph, x: Var, mode: Mode, rng: &mut RngStream) -> Result<Var> {
        let mut h = x;
        if let Some(sigma) = self.noise_sigma {
            h = g.gaussian_noise(h, sigma, mode, rng)?;
        }
        for i in 0..self.convs.len() {
            h = self.convs[i].forward(g, h)?;
            if i > 0 {
                h = self.norms[i - 1].forward(g, h, mode)?;
            }
            h = g.leaky_relu(h, self.leaky_slope)?;
            h = g.dropout(h, self.dropout, mode, rng)?;
        }
        let h = g.flatten(h)?;
        let logit = self.head.forward(g, h)?;
        g.sigmoid(logit)
    }
}

impl Module for Discriminator {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(String, &'a Parameter)) {
        for (i, c) in self.convs.iter().enumerate() {
            c.visit_params(&mut |n, p| f(scoped(&format!("conv{i}"), n), p));
        }
        for (i, b) in self.norms.iter().enumerate() {
            b.visit_params(&mut |n, p| f(scoped(&format!("bn{i}"), n), p));
        }
        self.head.visit_params(&mut |n, p| f(scoped("head", n), p));
    }

    fn visit_params_mut<'a>(&'a mut self, f: &mut dyn FnMut(String, &'a mut Parameter)) {
        for (i, c) in self.convs.iter_mut().enumerate() {
            c.visit_params_mut(&mut |n, p| f(scoped(&format!("conv{i}"), n), p));
        }
        for (i, b) in self.norms.iter_mut().enumerate() {
            b.visit_params_mut(&mut |n, p| f(scoped(&format!("bn{i}"), n), p));
        }
        self.head.visit_params_mut(&mut |n, p| f(scoped("head", n), p));
    }

    fn visit_stats<'a>(&'a self, f: &mut dyn FnMut(String, &'a BatchNormStats)) {
        for (i, b) in self.norms.iter().enumerate() {
            b.visit_stats(&mut |n, s| f(scoped(&format!("bn{i}"), n), s));
        }
    }

    fn visit_stats_mut<'a>(&'a mut self, f: &mut dyn FnMut(String, &'a mut BatchNormStats)) {
        for (i, b) in self.norms.iter_mut().enumerate() {
            b.visit_stats_mut(&mut |n, s| f(scoped(&format!("bn{i}"), n), s));
        }
    }
}
