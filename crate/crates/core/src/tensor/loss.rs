use super::graph::{zip_map, Graph, Op, Var};
use super::Tensor;
use crate::error::{shape_err, Result};

/// Probabilities are clamped to `[CLAMP, 1 − CLAMP]` inside the logarithms.
pub const CLAMP: f32 = 1e-7;

fn clamp(p: f32) -> f64 {
    f64::from(p.clamp(CLAMP, 1.0 - CLAMP))
}

fn inside(p: f32) -> bool {
    (CLAMP..=1.0 - CLAMP).contains(&p)
}

pub(super) fn bce_backward(pred: &Tensor, target: &Tensor, g: f32) -> Tensor {
    let n = pred.len() as f64;
    zip_map(pred, target, |p, t| {
        if !inside(p) {
            return 0.0;
        }
        let (p, t) = (f64::from(p), f64::from(t));
        (f64::from(g) * (-t / p + (1.0 - t) / (1.0 - p)) / n) as f32
    })
}

pub(super) fn cross_entropy_backward(pred: &Tensor, onehot: &Tensor, g: f32) -> Tensor {
    let rows = pred.shape()[0] as f64;
    zip_map(pred, onehot, |p, t| {
        if !inside(p) || t == 0.0 {
            return 0.0;
        }
        (-f64::from(g) * f64::from(t) / f64::from(p) / rows) as f32
    })
}

impl Graph {
    /// Mean binary cross-entropy against (possibly soft) targets.
    pub fn bce_loss(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        if self.shape(pred) != target.shape() {
            return Err(shape_err!(
                "bce_loss: prediction {:?} vs target {:?}",
                self.shape(pred),
                target.shape()
            ));
        }
        let p = self.value(pred);
        let total: f64 = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &t)| {
                let (p, t) = (clamp(p), f64::from(t));
                -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
            })
            .sum();
        let loss = (total / p.len() as f64) as f32;
        self.push(
            "bce_loss",
            Tensor::scalar(loss),
            Op::Bce {
                pred,
                target: target.clone(),
            },
        )
    }

    /// Mean over rows of `−Σ onehot·log(pred)`.
    pub fn cross_entropy(&mut self, pred: Var, onehot: &Tensor) -> Result<Var> {
        if self.shape(pred) != onehot.shape() || self.shape(pred).len() != 2 {
            return Err(shape_err!(
                "cross_entropy: prediction {:?} vs one-hot {:?}",
                self.shape(pred),
                onehot.shape()
            ));
        }
        let p = self.value(pred);
        let total: f64 = p
            .data()
            .iter()
            .zip(onehot.data())
            .filter(|(_, &t)| t != 0.0)
            .map(|(&p, &t)| -f64::from(t) * clamp(p).ln())
            .sum();
        let loss = (total / p.shape()[0] as f64) as f32;
        self.push(
            "cross_entropy",
            Tensor::scalar(loss),
            Op::CrossEntropy {
                pred,
                onehot: onehot.clone(),
            },
        )
    }
}
