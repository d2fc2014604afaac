use super::graph::{Graph, Op, Var};
use super::Tensor;
use crate::error::{shape_err, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f32),
    Sigmoid,
    Tanh,
    /// Over the last axis.
    Softmax,
}

fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_rows(x: &Tensor) -> Tensor {
    let width = *x.shape().last().expect("rank >= 1");
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(width) {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut total = 0.0f64;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += f64::from(*v);
        }
        for v in row.iter_mut() {
            *v = (f64::from(*v) / total) as f32;
        }
    }
    out
}

pub(super) fn forward(kind: Activation, x: &Tensor) -> Tensor {
    match kind {
        Activation::Relu => x.map(|v| v.max(0.0)),
        Activation::LeakyRelu(a) => x.map(|v| if v > 0.0 { v } else { a * v }),
        Activation::Sigmoid => x.map(sigmoid),
        Activation::Tanh => x.map(f32::tanh),
        Activation::Softmax => softmax_rows(x),
    }
}

pub(super) fn backward(kind: Activation, x: &Tensor, y: &Tensor, gy: &Tensor) -> Tensor {
    let data: Vec<f32> = match kind {
        Activation::Relu => x
            .data()
            .iter()
            .zip(gy.data())
            .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
            .collect(),
        Activation::LeakyRelu(a) => x
            .data()
            .iter()
            .zip(gy.data())
            .map(|(&v, &g)| if v > 0.0 { g } else { a * g })
            .collect(),
        Activation::Sigmoid => y
            .data()
            .iter()
            .zip(gy.data())
            .map(|(&s, &g)| g * s * (1.0 - s))
            .collect(),
        Activation::Tanh => y
            .data()
            .iter()
            .zip(gy.data())
            .map(|(&t, &g)| g * (1.0 - t * t))
            .collect(),
        Activation::Softmax => {
            let width = *y.shape().last().expect("rank >= 1");
            let mut out = Vec::with_capacity(y.len());
            for (yr, gr) in y.data().chunks(width).zip(gy.data().chunks(width)) {
                let dot: f64 = yr.iter().zip(gr).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum();
                out.extend(yr.iter().zip(gr).map(|(&s, &g)| s * (g - dot as f32)));
            }
            out
        }
    };
    Tensor::new(x.shape(), data).expect("activation grad")
}

impl Graph {
    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        if let Activation::LeakyRelu(a) = kind {
            if !a.is_finite() {
                return Err(shape_err!("leaky_relu slope must be finite"));
            }
        }
        let y = forward(kind, self.value(x));
        self.push("activation", y, Op::Act { x, kind })
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Relu)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f32) -> Result<Var> {
        self.activation(x, Activation::LeakyRelu(slope))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Tanh)
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Softmax)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(kind: Activation, xs: &[f32]) -> Vec<f32> {
        forward(kind, &Tensor::new(&[xs.len()], xs.to_vec()).unwrap()).into_data()
    }

    #[test]
    fn relu_values() {
        assert_eq!(run(Activation::Relu, &[-1.0, 0.0, 2.0]), vec![0.0, 0.0, 2.0]);
    }

    #[test]
    fn leaky_relu_values() {
        let y = run(Activation::LeakyRelu(0.2), &[-1.0]);
        assert!((y[0] + 0.2).abs() < 1e-7);
    }

    #[test]
    fn softmax_uniform() {
        let y = run(Activation::Softmax, &[0.0, 0.0, 0.0]);
        for v in y {
            assert!((v - 1.0 / 3.0).abs() < 1e-7);
        }
    }

    #[test]
    fn softmax_stable_for_large_logits() {
        let y = run(Activation::Softmax, &[1000.0, 0.0, -1000.0]);
        assert!(y.iter().all(|v| v.is_finite()));
        assert!((y.iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn sigmoid_extremes_finite() {
        let y = run(Activation::Sigmoid, &[-200.0, 0.0, 200.0]);
        assert_eq!(y[1], 0.5);
        assert!(y[0] >= 0.0 && y[2] <= 1.0);
    }
}
