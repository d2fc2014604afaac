//! Batch normalization over the channel axis (axis 1) of `(N, C, ...)`.

use super::graph::{Graph, Op, Var};
use super::stochastic::Mode;
use super::Tensor;
use crate::error::{invalid, shape_err, Result};

/// Running statistics for eval-mode normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormStats {
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    /// Weight of the newest batch in the moving average.
    pub momentum: f32,
    pub eps: f32,
}

impl BatchNormStats {
    pub fn new(channels: usize) -> Self {
        Self {
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.1,
            eps: 1e-5,
        }
    }
}

pub(super) struct Saved {
    xhat: Vec<f32>,
    inv_std: Vec<f32>,
    /// Batch statistics were used (train mode), so the mean/var depend on x.
    batch_stats: bool,
}

fn layout(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(shape_err!("batch_norm needs (N, C, ...), got {shape:?}"));
    }
    let inner: usize = shape[2..].iter().product();
    Ok((shape[0], shape[1], inner))
}

impl Graph {
    /// Normalizes per channel, then applies `gamma·x̂ + beta`.
    ///
    /// In [`Mode::Train`] batch statistics are used and, when `update` is set,
    /// folded into `stats`; in [`Mode::Eval`] the running statistics are used.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut BatchNormStats,
        mode: Mode,
        update: bool,
    ) -> Result<Var> {
        let (n, c, inner) = layout(self.shape(x))?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(shape_err!(
                "batch_norm: gamma/beta must have shape [{c}], got {:?} and {:?}",
                self.shape(gamma),
                self.shape(beta)
            ));
        }
        if stats.running_mean.len() != c {
            return Err(shape_err!(
                "batch_norm: running stats cover {} channels, input has {c}",
                stats.running_mean.len()
            ));
        }
        let train = mode == Mode::Train;
        if train && n < 2 {
            return Err(invalid!("batch_norm in train mode needs batch size >= 2, got {n}"));
        }
        let xs = self.value(x).data();
        let m = n * inner;
        let mut mean = vec![0.0f32; c];
        let mut var = vec![0.0f32; c];
        if train {
            for ch in 0..c {
                let mut s = 0.0f64;
                for i in 0..n {
                    let o = (i * c + ch) * inner;
                    s += xs[o..o + inner].iter().map(|&v| f64::from(v)).sum::<f64>();
                }
                let mu = s / m as f64;
                let mut ss = 0.0f64;
                for i in 0..n {
                    let o = (i * c + ch) * inner;
                    ss += xs[o..o + inner]
                        .iter()
                        .map(|&v| (f64::from(v) - mu).powi(2))
                        .sum::<f64>();
                }
                mean[ch] = mu as f32;
                var[ch] = (ss / m as f64) as f32;
                if update {
                    let unbiased = (ss / (m - 1).max(1) as f64) as f32;
                    let k = stats.momentum;
                    stats.running_mean[ch] = (1.0 - k) * stats.running_mean[ch] + k * mean[ch];
                    stats.running_var[ch] = (1.0 - k) * stats.running_var[ch] + k * unbiased;
                }
            }
        } else {
            mean.copy_from_slice(&stats.running_mean);
            var.copy_from_slice(&stats.running_var);
        }
        let inv_std: Vec<f32> = var.iter().map(|v| 1.0 / (v + stats.eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![0.0f32; xs.len()];
        let mut y = vec![0.0f32; xs.len()];
        for i in 0..n {
            for ch in 0..c {
                let o = (i * c + ch) * inner;
                for j in o..o + inner {
                    let h = (xs[j] - mean[ch]) * inv_std[ch];
                    xhat[j] = h;
                    y[j] = g[ch] * h + bt[ch];
                }
            }
        }
        let out = Tensor::new(self.shape(x), y)?;
        let saved = Saved {
            xhat,
            inv_std,
            batch_stats: train,
        };
        self.push("batch_norm", out, Op::BatchNorm { x, gamma, beta, saved })
    }
}

pub(super) fn backward(
    shape: &[usize],
    gamma: &Tensor,
    gy: &Tensor,
    saved: &Saved,
    need_x: bool,
) -> (Option<Tensor>, Tensor, Tensor) {
    let (n, c, inner) = layout(shape).expect("recorded shape");
    let m = (n * inner) as f64;
    let dy = gy.data();
    let mut dgamma = vec![0.0f64; c];
    let mut dbeta = vec![0.0f64; c];
    for i in 0..n {
        for ch in 0..c {
            let o = (i * c + ch) * inner;
            for j in o..o + inner {
                dgamma[ch] += f64::from(dy[j]) * f64::from(saved.xhat[j]);
                dbeta[ch] += f64::from(dy[j]);
            }
        }
    }
    let dx = need_x.then(|| {
        let g = gamma.data();
        let mut dx = vec![0.0f32; dy.len()];
        for i in 0..n {
            for ch in 0..c {
                let o = (i * c + ch) * inner;
                let scale = g[ch] * saved.inv_std[ch];
                for j in o..o + inner {
                    dx[j] = if saved.batch_stats {
                        // dx = γ/σ · (dy − mean(dy) − x̂·mean(dy·x̂))
                        let corr = (dbeta[ch] + f64::from(saved.xhat[j]) * dgamma[ch]) / m;
                        (f64::from(scale) * (f64::from(dy[j]) - corr)) as f32
                    } else {
                        scale * dy[j]
                    };
                }
            }
        }
        Tensor::new(shape, dx).expect("bn dx")
    });
    let to_t = |v: Vec<f64>| Tensor::new(&[c], v.into_iter().map(|x| x as f32).collect()).expect("bn");
    (dx, to_t(dgamma), to_t(dbeta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    #[test]
    fn train_mode_normalizes() {
        let mut rng = RngStream::new(11);
        let mut g = Graph::new();
        let x = g
            .input(Tensor::randn(&[8, 3, 4, 4], 3.0, &mut rng).map(|v| v + 5.0))
            .unwrap();
        let gamma = g.input(Tensor::full(&[3], 1.0)).unwrap();
        let beta = g.input(Tensor::zeros(&[3])).unwrap();
        let mut stats = BatchNormStats::new(3);
        let y = g.batch_norm(x, gamma, beta, &mut stats, Mode::Train, true).unwrap();
        let yv = g.value(y).data();
        for ch in 0..3 {
            let vals: Vec<f64> = (0..8)
                .flat_map(|i| (0..16).map(move |j| (i * 3 + ch) * 16 + j))
                .map(|j| yv[j] as f64)
                .collect();
            let mu = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mu.abs() < 1e-4, "mean {mu}");
            assert!((var - 1.0).abs() < 1e-3, "var {var}");
        }
        assert!(stats.running_mean.iter().all(|&m| m > 0.3));
    }

    #[test]
    fn eval_mode_with_unit_stats_is_near_identity() {
        let x_t = Tensor::from_fn(&[2, 2, 2, 2], |i| i as f32 * 0.1 - 0.5);
        let mut g = Graph::new();
        let x = g.input(x_t.clone()).unwrap();
        let gamma = g.input(Tensor::full(&[2], 1.0)).unwrap();
        let beta = g.input(Tensor::zeros(&[2])).unwrap();
        let mut stats = BatchNormStats::new(2);
        let y = g.batch_norm(x, gamma, beta, &mut stats, Mode::Eval, true).unwrap();
        for (a, b) in g.value(y).data().iter().zip(x_t.data()) {
            assert!((a - b).abs() < 1e-4);
        }
        assert_eq!(stats, BatchNormStats::new(2));
    }

    #[test]
    fn batch_of_one_rejected_in_train_mode() {
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(&[1, 2, 2, 2])).unwrap();
        let gamma = g.input(Tensor::full(&[2], 1.0)).unwrap();
        let beta = g.input(Tensor::zeros(&[2])).unwrap();
        let mut stats = BatchNormStats::new(2);
        assert!(g.batch_norm(x, gamma, beta, &mut stats, Mode::Train, true).is_err());
        assert!(g.batch_norm(x, gamma, beta, &mut stats, Mode::Eval, true).is_ok());
    }
}
