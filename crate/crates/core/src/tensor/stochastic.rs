use super::graph::{Graph, Op, Var};
use super::Tensor;
use crate::error::{invalid, Result};
use crate::rng::RngStream;

/// Train/eval switch for layers whose behavior differs between the two.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

impl Graph {
    /// Inverted dropout: zero with probability `p`, scale survivors by
    /// `1/(1−p)`. Identity in eval mode.
    pub fn dropout(&mut self, x: Var, p: f32, mode: Mode, rng: &mut RngStream) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(invalid!("dropout rate must satisfy 0 <= p < 1, got {p}"));
        }
        if mode == Mode::Eval || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f32> = (0..self.value(x).len())
            .map(|_| if rng.uniform() < p { 0.0 } else { keep })
            .collect();
        let y: Vec<f32> = self
            .value(x)
            .data()
            .iter()
            .zip(&mask)
            .map(|(v, m)| v * m)
            .collect();
        let out = Tensor::new(self.shape(x), y)?;
        self.push("dropout", out, Op::Dropout { x, mask })
    }

    /// Adds i.i.d. N(0, sigma²) noise in train mode; the gradient passes
    /// through unchanged.
    pub fn gaussian_noise(&mut self, x: Var, sigma: f32, mode: Mode, rng: &mut RngStream) -> Result<Var> {
        if !sigma.is_finite() || sigma < 0.0 {
            return Err(invalid!("noise sigma must be finite and >= 0, got {sigma}"));
        }
        if mode == Mode::Eval || sigma == 0.0 {
            return Ok(x);
        }
        let src = self.value(x);
        let noisy: Vec<f32> = src.data().iter().map(|v| v + sigma * rng.normal()).collect();
        let y = Tensor::new(src.shape(), noisy)?;
        self.push("gaussian_noise", y, Op::Identity(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dropout_identity_cases() {
        let mut rng = RngStream::new(0);
        let mut g = Graph::new();
        let x = g.input(Tensor::full(&[10], 1.0)).unwrap();
        assert_eq!(g.dropout(x, 0.0, Mode::Train, &mut rng).unwrap(), x);
        assert_eq!(g.dropout(x, 0.0, Mode::Eval, &mut rng).unwrap(), x);
        assert_eq!(g.dropout(x, 0.25, Mode::Eval, &mut rng).unwrap(), x);
        assert!(g.dropout(x, 1.0, Mode::Train, &mut rng).is_err());
    }

    #[test]
    fn dropout_keep_fraction() {
        let mut rng = RngStream::new(5);
        let mut g = Graph::new();
        let x = g.input(Tensor::full(&[100_000], 1.0)).unwrap();
        let y = g.dropout(x, 0.25, Mode::Train, &mut rng).unwrap();
        let kept = g.value(y).data().iter().filter(|&&v| v != 0.0).count() as f64 / 1e5;
        assert!((kept - 0.75).abs() < 0.01, "kept {kept}");
        let survivor = g.value(y).data().iter().find(|&&v| v != 0.0).unwrap();
        assert!((survivor - 4.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn noise_std_and_identities() {
        let mut rng = RngStream::new(9);
        let mut g = Graph::new();
        let base = Tensor::from_fn(&[100_000], |i| (i % 17) as f32 * 0.01);
        let x = g.input(base.clone()).unwrap();
        assert_eq!(g.gaussian_noise(x, 0.0, Mode::Train, &mut rng).unwrap(), x);
        assert_eq!(g.gaussian_noise(x, 0.3, Mode::Eval, &mut rng).unwrap(), x);
        let y = g.gaussian_noise(x, 0.05, Mode::Train, &mut rng).unwrap();
        let d: Vec<f64> = g
            .value(y)
            .data()
            .iter()
            .zip(base.data())
            .map(|(a, b)| f64::from(a - b))
            .collect();
        let mu = d.iter().sum::<f64>() / d.len() as f64;
        let sd = (d.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (d.len() - 1) as f64).sqrt();
        assert!((sd - 0.05).abs() < 0.002, "std {sd}");
    }
}
