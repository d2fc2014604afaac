//! Parameterized layers shared by the generator, discriminator and
//! classifier. Weights start as N(0, 0.02²), biases at zero, batch-norm
//! scale at one and shift at zero.

use super::{BatchNormStats, Graph, Mode, Parameter, Tensor, Var};
use crate::error::Result;
use crate::rng::RngStream;

pub const INIT_STD: f32 = 0.02;

/// Walks the parameters and batch-norm statistics of a network in a fixed
/// order with stable names.
pub trait Module {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(String, &'a Parameter));
    fn visit_params_mut<'a>(&'a mut self, f: &mut dyn FnMut(String, &'a mut Parameter));
    fn visit_stats_mut<'a>(&'a mut self, _f: &mut dyn FnMut(String, &'a mut BatchNormStats)) {}
    fn visit_stats<'a>(&'a self, _f: &mut dyn FnMut(String, &'a BatchNormStats)) {}

    fn params(&self) -> Vec<&Parameter> {
        let mut out = Vec::new();
        self.visit_params(&mut |_, p| out.push(p));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out = Vec::new();
        self.visit_params_mut(&mut |_, p| out.push(p));
        out
    }

    fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    fn set_trainable(&mut self, trainable: bool) {
        self.visit_params_mut(&mut |_, p| p.trainable = trainable);
    }

    fn zero_grads(&mut self) {
        self.visit_params_mut(&mut |_, p| p.zero_grad());
    }

    /// Concatenated parameter values; cheap equality snapshots for tests.
    fn snapshot(&self) -> Vec<u32> {
        let mut out = Vec::new();
        self.visit_params(&mut |_, p| out.extend(p.value.data().iter().map(|v| v.to_bits())));
        out
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: Parameter,
    pub bias: Parameter,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, padding: usize, rng: &mut RngStream) -> Self {
        Self {
            weight: Parameter::new(Tensor::randn(&[out_ch, in_ch, kernel, kernel], INIT_STD, rng)),
            bias: Parameter::new(Tensor::zeros(&[out_ch])),
            stride,
            padding,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(&self.weight)?;
        let b = g.param(&self.bias)?;
        g.conv2d(x, w, b, self.stride, self.padding)
    }
}

#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    pub weight: Parameter,
    pub bias: Parameter,
    pub stride: usize,
    pub padding: usize,
}

impl ConvTranspose2d {
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, padding: usize, rng: &mut RngStream) -> Self {
        Self {
            weight: Parameter::new(Tensor::randn(&[in_ch, out_ch, kernel, kernel], INIT_STD, rng)),
            bias: Parameter::new(Tensor::zeros(&[out_ch])),
            stride,
            padding,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(&self.weight)?;
        let b = g.param(&self.bias)?;
        g.conv2d_transpose(x, w, b, self.stride, self.padding)
    }
}

#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: Parameter,
    pub bias: Parameter,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, rng: &mut RngStream) -> Self {
        Self {
            weight: Parameter::new(Tensor::randn(&[inputs, outputs], INIT_STD, rng)),
            bias: Parameter::new(Tensor::zeros(&[outputs])),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(&self.weight)?;
        let b = g.param(&self.bias)?;
        g.dense(x, w, b)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: Parameter,
    pub beta: Parameter,
    pub stats: BatchNormStats,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Parameter::new(Tensor::full(&[channels], 1.0)),
            beta: Parameter::new(Tensor::zeros(&[channels])),
            stats: BatchNormStats::new(channels),
        }
    }

    /// Running statistics are only folded in while the layer is trainable.
    pub fn forward(&mut self, g: &mut Graph, x: Var, mode: Mode) -> Result<Var> {
        let gamma = g.param(&self.gamma)?;
        let beta = g.param(&self.beta)?;
        let update = self.gamma.trainable;
        g.batch_norm(x, gamma, beta, &mut self.stats, mode, update)
    }
}

macro_rules! weight_bias_module {
    ($t:ty) => {
        impl Module for $t {
            fn visit_params<'a>(&'a self, f: &mut dyn FnMut(String, &'a Parameter)) {
                f("weight".into(), &self.weight);
                f("bias".into(), &self.bias);
            }
            fn visit_params_mut<'a>(&'a mut self, f: &mut dyn FnMut(String, &'a mut Parameter)) {
                f("weight".into(), &mut self.weight);
                f("bias".into(), &mut self.bias);
            }
        }
    };
}

weight_bias_module!(Conv2d);
weight_bias_module!(ConvTranspose2d);
weight_bias_module!(Dense);

impl Module for BatchNorm {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(String, &'a Parameter)) {
        f("gamma".into(), &self.gamma);
        f("beta".into(), &self.beta);
    }
    fn visit_params_mut<'a>(&'a mut self, f: &mut dyn FnMut(String, &'a mut Parameter)) {
        f("gamma".into(), &mut self.gamma);
        f("beta".into(), &mut self.beta);
    }
    fn visit_stats_mut<'a>(&'a mut self, f: &mut dyn FnMut(String, &'a mut BatchNormStats)) {
        f(String::new(), &mut self.stats);
    }
    fn visit_stats<'a>(&'a self, f: &mut dyn FnMut(String, &'a BatchNormStats)) {
        f(String::new(), &self.stats);
    }
}

/// Prefixes child names as `prefix.name`.
pub fn scoped(prefix: &str, name: String) -> String {
    if name.is_empty() {
        prefix.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
