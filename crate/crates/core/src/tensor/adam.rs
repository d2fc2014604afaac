use super::Parameter;
use crate::error::{shape_err, Result};

/// Adam moments for one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    /// Number of completed steps.
    pub t: u64,
    pub states: Vec<AdamState>,
}

impl Adam {
    pub fn new(lr: f32, beta1: f32) -> Self {
        Self {
            lr,
            beta1,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            states: Vec::new(),
        }
    }

    /// One update of every trainable parameter from its `grad`.
    /// The parameter list must be in the same order on every call.
    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = &'a mut Parameter>) -> Result<()> {
        let params: Vec<&mut Parameter> = params.into_iter().collect();
        if self.states.is_empty() {
            self.states = params
                .iter()
                .map(|p| AdamState {
                    m: vec![0.0; p.len()],
                    v: vec![0.0; p.len()],
                })
                .collect();
        }
        if self.states.len() != params.len() {
            return Err(shape_err!(
                "optimizer tracks {} parameters, got {}",
                self.states.len(),
                params.len()
            ));
        }
        self.t += 1;
        let t = self.t as i32;
        let c1 = (1.0 - f64::from(self.beta1).powi(t)) as f32;
        let c2 = (1.0 - f64::from(self.beta2).powi(t)) as f32;
        let (b1, b2) = (self.beta1, self.beta2);
        for (p, st) in params.into_iter().zip(self.states.iter_mut()) {
            if st.m.len() != p.len() {
                return Err(shape_err!(
                    "optimizer state of length {} for parameter of length {}",
                    st.m.len(),
                    p.len()
                ));
            }
            if !p.trainable {
                continue;
            }
            let grad = p.grad.data();
            let value = p.value.data_mut();
            for i in 0..value.len() {
                let g = grad[i];
                st.m[i] = b1 * st.m[i] + (1.0 - b1) * g;
                st.v[i] = b2 * st.v[i] + (1.0 - b2) * g * g;
                let mhat = st.m[i] / c1;
                let vhat = st.v[i] / c2;
                value[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Parameter::new(Tensor::full(&[3], 0.7));
        let before = p.value.clone();
        let mut opt = Adam::new(0.0002, 0.5);
        for _ in 0..5 {
            opt.step([&mut p]).unwrap();
        }
        assert_eq!(p.value, before);
        assert_eq!(opt.t, 5);
    }

    #[test]
    fn first_step_size_is_lr() {
        // t=1: m̂ = g, v̂ = g², so the step is lr·g/(|g|+ε) ≈ lr.
        let mut p = Parameter::new(Tensor::scalar(1.0));
        p.grad = Tensor::scalar(1.0);
        let mut opt = Adam::new(0.0002, 0.5);
        opt.step([&mut p]).unwrap();
        let delta = f64::from(p.value.item()) - 1.0;
        let want = -0.0002 / (1.0 + 1e-8);
        assert!((delta - want).abs() < 1e-7, "{delta}");
    }

    #[test]
    fn frozen_parameter_untouched() {
        let mut p = Parameter::new(Tensor::scalar(1.0));
        p.grad = Tensor::scalar(1.0);
        p.trainable = false;
        let mut opt = Adam::new(0.1, 0.5);
        opt.step([&mut p]).unwrap();
        assert_eq!(p.value.item(), 1.0);
    }
}
