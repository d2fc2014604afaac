use super::graph::{Graph, Op, Var};
use super::Tensor;
use crate::error::{invalid, shape_err, Result};

impl Graph {
    /// Non-overlapping max pooling with a square `window` (stride = window).
    /// Ties route the gradient to the first maximal element in raster order.
    pub fn max_pool2d(&mut self, x: Var, window: usize) -> Result<Var> {
        if window == 0 {
            return Err(invalid!("pool window must be positive"));
        }
        let (n, c, h, w) = match *self.shape(x) {
            [n, c, h, w] => (n, c, h, w),
            ref s => return Err(shape_err!("max_pool2d needs NCHW input, got {s:?}")),
        };
        if h % window != 0 || w % window != 0 {
            return Err(shape_err!(
                "max_pool2d: spatial dims {h}x{w} not divisible by window {window}"
            ));
        }
        let (oh, ow) = (h / window, w / window);
        let xs = self.value(x).data();
        let mut y = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + oy * window * w + ox * window;
                    for dy in 0..window {
                        for dx in 0..window {
                            let j = base + (oy * window + dy) * w + ox * window + dx;
                            if xs[j] > xs[best] {
                                best = j;
                            }
                        }
                    }
                    y.push(xs[best]);
                    argmax.push(best);
                }
            }
        }
        let out = Tensor::new(&[n, c, oh, ow], y)?;
        self.push("max_pool2d", out, Op::MaxPool { x, argmax })
    }
}

pub(super) fn backward(shape: &[usize], argmax: &[usize], gy: &Tensor) -> Tensor {
    let mut dx = Tensor::zeros(shape);
    let d = dx.data_mut();
    for (&j, &g) in argmax.iter().zip(gy.data()) {
        d[j] += g;
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halves_spatial_dims() {
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(&[1, 16, 96, 96])).unwrap();
        let y = g.max_pool2d(x, 2).unwrap();
        assert_eq!(g.shape(y), &[1, 16, 48, 48]);
    }

    #[test]
    fn constant_input_routes_unit_mass_per_window() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::full(&[1, 1, 4, 4], 2.5)).unwrap();
        let y = g.max_pool2d(x, 2).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 2.5));
        let l = g.sum(y).unwrap();
        g.backward(l).unwrap();
        let gx = g.grad(x).unwrap().data();
        // first element of each window gets the whole unit
        assert_eq!(gx.iter().sum::<f32>(), 4.0);
        assert_eq!(gx[0], 1.0);
        assert_eq!(gx[1], 0.0);
        assert_eq!(gx[2], 1.0);
    }

    #[test]
    fn indivisible_dims_rejected() {
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(&[1, 1, 5, 4])).unwrap();
        assert!(g.max_pool2d(x, 2).is_err());
    }
}
