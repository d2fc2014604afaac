use std::collections::BTreeMap;

use super::activation::{self, Activation};
use super::conv::{self, ConvGeometry};
use super::gemm::{gemm, Mat};
use super::loss;
use super::norm;
use super::pool;
use super::{ParamId, Parameter, Tensor};
use crate::error::{shape_err, Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(super) usize);

pub(super) enum Op {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    Sum(Var),
    Mean(Var),
    /// Reshape or any op whose gradient is the identity (additive noise).
    Identity(Var),
    Dense {
        x: Var,
        w: Var,
        b: Var,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeometry,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeometry,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        saved: norm::Saved,
    },
    Act {
        x: Var,
        kind: Activation,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Dropout {
        x: Var,
        mask: Vec<f32>,
    },
    Bce {
        pred: Var,
        target: Tensor,
    },
    CrossEntropy {
        pred: Var,
        onehot: Tensor,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    name: &'static str,
}

/// Tape of executed differentiable operations.
///
/// One graph records one forward pass and supports one backward sweep; it
/// is owned exclusively by the step that built it.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    params: BTreeMap<ParamId, Var>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(super) fn push(&mut self, name: &'static str, value: Tensor, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name.into() });
        }
        let requires_grad = match &op {
            Op::Leaf => false,
            _ => self.op_inputs(&op).iter().any(|v| self.nodes[v.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            name,
        });
        self.grads.push(None);
        Ok(Var(self.nodes.len() - 1))
    }

    fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        let v = self.push("leaf", value, Op::Leaf)?;
        self.nodes[v.0].requires_grad = requires_grad;
        Ok(v)
    }

    /// Constant input (no gradient is tracked for it).
    pub fn input(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    /// Free variable whose gradient is tracked.
    pub fn variable(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, true)
    }

    /// Binds a parameter. Binding the same parameter twice returns the same
    /// node, so gradients from several uses accumulate.
    pub fn param(&mut self, p: &Parameter) -> Result<Var> {
        if let Some(&v) = self.params.get(&p.id()) {
            return Ok(v);
        }
        let v = self.leaf(p.value.clone(), p.trainable)?;
        self.params.insert(p.id(), v);
        Ok(v)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward sweep's loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn param_grad(&self, p: &Parameter) -> Option<&Tensor> {
        self.params.get(&p.id()).and_then(|&v| self.grad(v))
    }

    /// Zeroes each parameter's gradient, then stores the gradient from the
    /// last backward sweep. Frozen or unbound parameters end up with zeros.
    pub fn write_grads<'a>(&self, params: impl IntoIterator<Item = &'a mut Parameter>) {
        for p in params {
            p.zero_grad();
            if !p.trainable {
                continue;
            }
            if let Some(g) = self.param_grad(p) {
                p.grad.add_assign(g);
            }
        }
    }

    fn op_inputs(&self, op: &Op) -> Vec<Var> {
        match op {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Scale(a, _) | Op::Sum(a) | Op::Mean(a) | Op::Identity(a) => vec![*a],
            Op::Dense { x, w, b }
            | Op::Conv2d { x, w, b, .. }
            | Op::ConvTranspose2d { x, w, b, .. } => vec![*x, *w, *b],
            Op::BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Act { x, .. } | Op::MaxPool { x, .. } | Op::Dropout { x, .. } => vec![*x],
            Op::Bce { pred, .. } | Op::CrossEntropy { pred, .. } => vec![*pred],
        }
    }

    /// Sweeps the tape in reverse execution order from the scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(Error::NoGraph(format!(
                "loss node {} not recorded on this graph",
                loss.0
            )));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(shape_err!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            ));
        }
        self.grads.iter_mut().for_each(|g| *g = None);
        self.grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(grad) = self.grads[i].take() else {
                continue;
            };
            let contributions = self.node_backward(i, &grad);
            self.grads[i] = Some(grad);
            for (v, g) in contributions {
                debug_assert_eq!(g.shape(), self.nodes[v.0].value.shape(), "{}", self.nodes[i].name);
                match &mut self.grads[v.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }

    fn node_backward(&self, i: usize, gy: &Tensor) -> Vec<(Var, Tensor)> {
        let node = &self.nodes[i];
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let val = |v: Var| &self.nodes[v.0].value;
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if needs(v) {
                        out.push((v, gy.clone()));
                    }
                }
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    out.push((*a, zip_map(gy, val(*b), |g, y| g * y)));
                }
                if needs(*b) {
                    out.push((*b, zip_map(gy, val(*a), |g, x| g * x)));
                }
            }
            Op::Scale(a, s) => out.push((*a, gy.map(|g| g * s))),
            Op::Sum(a) => out.push((*a, Tensor::full(val(*a).shape(), gy.item()))),
            Op::Mean(a) => {
                let n = val(*a).len() as f32;
                out.push((*a, Tensor::full(val(*a).shape(), gy.item() / n)));
            }
            Op::Identity(a) => {
                let g = gy.clone().reshape(val(*a).shape()).expect("identity shape");
                out.push((*a, g));
            }
            Op::Dense { x, w, b } => {
                let (xs, ws) = (val(*x), val(*w));
                let (n, f) = (xs.shape()[0], xs.shape()[1]);
                let o = ws.shape()[1];
                if needs(*x) {
                    let mut dx = vec![0.0; n * f];
                    gemm(Mat::new(gy.data(), n, o), Mat::t(ws.data(), f, o), 0.0, &mut dx);
                    out.push((*x, Tensor::new(xs.shape(), dx).expect("dense dx")));
                }
                if needs(*w) {
                    let mut dw = vec![0.0; f * o];
                    gemm(Mat::t(xs.data(), n, f), Mat::new(gy.data(), n, o), 0.0, &mut dw);
                    out.push((*w, Tensor::new(ws.shape(), dw).expect("dense dw")));
                }
                if needs(*b) {
                    let mut db = vec![0.0f32; o];
                    for row in gy.data().chunks(o) {
                        for (acc, g) in db.iter_mut().zip(row) {
                            *acc += g;
                        }
                    }
                    out.push((*b, Tensor::new(&[o], db).expect("dense db")));
                }
            }
            Op::Conv2d { x, w, b, geom } => {
                let g = conv::conv2d_backward(val(*x), val(*w), gy, *geom, needs(*x), needs(*w), needs(*b));
                push_grads(&mut out, [(*x, g.0), (*w, g.1), (*b, g.2)]);
            }
            Op::ConvTranspose2d { x, w, b, geom } => {
                let g = conv::conv_transpose2d_backward(
                    val(*x),
                    val(*w),
                    gy,
                    *geom,
                    needs(*x),
                    needs(*w),
                    needs(*b),
                );
                push_grads(&mut out, [(*x, g.0), (*w, g.1), (*b, g.2)]);
            }
            Op::BatchNorm { x, gamma, beta, saved } => {
                let g = norm::backward(val(*x).shape(), val(*gamma), gy, saved, needs(*x));
                let (dx, dgamma, dbeta) = g;
                push_grads(
                    &mut out,
                    [
                        (*x, dx),
                        (*gamma, needs(*gamma).then_some(dgamma)),
                        (*beta, needs(*beta).then_some(dbeta)),
                    ],
                );
            }
            Op::Act { x, kind } => {
                out.push((*x, activation::backward(*kind, val(*x), &node.value, gy)));
            }
            Op::MaxPool { x, argmax } => {
                out.push((*x, pool::backward(val(*x).shape(), argmax, gy)));
            }
            Op::Dropout { x, mask } => {
                let data = gy.data().iter().zip(mask).map(|(g, m)| g * m).collect();
                out.push((*x, Tensor::new(gy.shape(), data).expect("dropout grad")));
            }
            Op::Bce { pred, target } => {
                out.push((*pred, loss::bce_backward(val(*pred), target, gy.item())));
            }
            Op::CrossEntropy { pred, onehot } => {
                out.push((*pred, loss::cross_entropy_backward(val(*pred), onehot, gy.item())));
            }
        }
        out
    }

    // ---- elementary ops ----

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err!(
                "{op}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let v = zip_map(self.value(a), self.value(b), |x, y| x + y);
        self.push("add", v, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let v = zip_map(self.value(a), self.value(b), |x, y| x * y);
        self.push("mul", v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f32) -> Result<Var> {
        let v = self.value(a).map(|x| x * s);
        self.push("scale", v, Op::Scale(a, s))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).sum() as f32;
        self.push("sum", Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let s = (t.sum() / t.len() as f64) as f32;
        self.push("mean", Tensor::scalar(s), Op::Mean(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).clone().reshape(shape)?;
        self.push("reshape", v, Op::Identity(a))
    }

    /// Collapses all but the leading axis.
    pub fn flatten(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a);
        let n = shape[0];
        let rest: usize = shape[1..].iter().product();
        self.reshape(a, &[n, rest])
    }

    /// `y = x·W + b` with `x: (batch, in)`, `W: (in, out)`, `b: (out)`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 2 || ws.len() != 2 || bs.len() != 1 {
            return Err(shape_err!(
                "dense expects (batch, in), (in, out), (out); got {xs:?}, {ws:?}, {bs:?}"
            ));
        }
        if xs[1] != ws[0] {
            return Err(shape_err!(
                "dense: input features {} do not match weight rows {}",
                xs[1],
                ws[0]
            ));
        }
        if bs[0] != ws[1] {
            return Err(shape_err!(
                "dense: bias length {} does not match output features {}",
                bs[0],
                ws[1]
            ));
        }
        let (n, f, o) = (xs[0], xs[1], ws[1]);
        let mut y = Vec::with_capacity(n * o);
        for _ in 0..n {
            y.extend_from_slice(self.value(b).data());
        }
        gemm(
            Mat::new(self.value(x).data(), n, f),
            Mat::new(self.value(w).data(), f, o),
            1.0,
            &mut y,
        );
        let t = Tensor::new(&[n, o], y)?;
        self.push("dense", t, Op::Dense { x, w, b })
    }
}

fn push_grads<const N: usize>(out: &mut Vec<(Var, Tensor)>, items: [(Var, Option<Tensor>); N]) {
    for (v, g) in items {
        if let Some(g) = g {
            out.push((v, g));
        }
    }
}

pub(super) fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f32, f32) -> f32) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape(), data).expect("zip_map shapes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::from_fn(&[2, 3], |i| i as f32)).unwrap();
        let l = g.sum(x).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn sum_of_squares_gradient_is_two_x() {
        let mut g = Graph::new();
        let t = Tensor::from_fn(&[5], |i| i as f32 - 2.0);
        let x = g.variable(t.clone()).unwrap();
        let sq = g.mul(x, x).unwrap();
        let l = g.sum(sq).unwrap();
        g.backward(l).unwrap();
        let want: Vec<f32> = t.data().iter().map(|v| 2.0 * v).collect();
        assert_eq!(g.grad(x).unwrap().data(), want.as_slice());
    }

    #[test]
    fn backward_without_forward_errors() {
        let mut g = Graph::new();
        assert!(matches!(g.backward(Var(0)), Err(Error::NoGraph(_))));
    }

    #[test]
    fn backward_needs_scalar() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::zeros(&[3])).unwrap();
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn dense_identity() {
        let mut g = Graph::new();
        let x = g.input(Tensor::from_fn(&[2, 3], |i| i as f32)).unwrap();
        let w = g
            .input(Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 }))
            .unwrap();
        let b = g.input(Tensor::zeros(&[3])).unwrap();
        let y = g.dense(x, w, b).unwrap();
        assert_eq!(g.value(y), g.value(x));
    }

    #[test]
    fn dense_dimension_mismatch() {
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(&[2, 4])).unwrap();
        let w = g.input(Tensor::zeros(&[3, 3])).unwrap();
        let b = g.input(Tensor::zeros(&[3])).unwrap();
        let err = g.dense(x, w, b).unwrap_err().to_string();
        assert!(err.contains("input features 4"), "{err}");
    }

    #[test]
    fn frozen_parameter_gets_no_gradient() {
        let mut p = Parameter::new(Tensor::full(&[2], 3.0));
        p.trainable = false;
        let mut g = Graph::new();
        let v = g.param(&p).unwrap();
        let x = g.variable(Tensor::full(&[2], 1.0)).unwrap();
        let y = g.mul(v, x).unwrap();
        let l = g.sum(y).unwrap();
        g.backward(l).unwrap();
        assert!(g.param_grad(&p).is_none());
        assert_eq!(g.grad(x).unwrap().data(), &[3.0, 3.0]);
        g.write_grads([&mut p]);
        assert_eq!(p.grad.data(), &[0.0, 0.0]);
    }

    #[test]
    fn shared_parameter_accumulates() {
        let mut p = Parameter::new(Tensor::full(&[1], 2.0));
        let mut g = Graph::new();
        let a = g.param(&p).unwrap();
        let b = g.param(&p).unwrap();
        assert_eq!(a, b);
        let y = g.add(a, b).unwrap();
        let l = g.sum(y).unwrap();
        g.backward(l).unwrap();
        g.write_grads([&mut p]);
        assert_eq!(p.grad.data(), &[2.0]);
    }

    #[test]
    fn non_finite_is_an_error() {
        let mut g = Graph::new();
        assert!(matches!(
            g.input(Tensor::full(&[1], f32::NAN)),
            Err(Error::NonFinite { .. })
        ));
    }
}
