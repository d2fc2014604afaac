//! Central finite-difference gradient checks.

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// `‖analytic − numeric‖∞ / ‖numeric‖∞`.
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Step used for the difference quotient.
pub const FD_STEP: f32 = 1e-3;

/// Central differences `(f(x+h) − f(x−h)) / 2h` for every element of
/// `input`; `f` runs in single precision, the quotient is formed in double.
pub fn finite_difference<F>(mut f: F, input: &Tensor, h: f32) -> Result<Vec<f64>>
where
    F: FnMut(&Tensor) -> Result<f32>,
{
    let mut x = input.clone();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + h;
        let plus = f64::from(f(&x)?);
        x.data_mut()[i] = orig - h;
        let minus = f64::from(f(&x)?);
        x.data_mut()[i] = orig;
        let step = f64::from(orig + h) - f64::from(orig - h);
        out.push((plus - minus) / step);
    }
    Ok(out)
}

/// Compares an analytic gradient against a numeric reference.
pub fn compare_gradients(analytic: &[f32], numeric: &[f64], tolerance: f64) -> GradCheckReport {
    let mut max_abs = 0.0f64;
    let mut scale = 0.0f64;
    for (&a, &n) in analytic.iter().zip(numeric) {
        max_abs = max_abs.max((f64::from(a) - n).abs());
        scale = scale.max(n.abs());
    }
    let max_rel_err = if scale > 0.0 {
        max_abs / scale
    } else if max_abs == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    GradCheckReport {
        max_rel_err,
        max_abs_err: max_abs,
        tolerance,
        passed: max_rel_err < tolerance,
    }
}

/// Checks the gradient of the scalar function built by `f` with respect to
/// its input. `f` must be deterministic: it is evaluated twice on the
/// unperturbed input and the results must agree bitwise.
pub fn gradient_check<F>(mut f: F, input: &Tensor, tolerance: f64) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph, Var) -> Result<Var>,
{
    let mut eval = |x: &Tensor| -> Result<f32> {
        let mut g = Graph::new();
        let v = g.input(x.clone())?;
        let out = f(&mut g, v)?;
        Ok(g.value(out).item())
    };
    let a = eval(input)?;
    let b = eval(input)?;
    if a.to_bits() != b.to_bits() {
        return Err(Error::NonDeterministic(format!(
            "two evaluations gave {a} and {b}"
        )));
    }
    let numeric = finite_difference(&mut eval, input, FD_STEP)?;

    let mut g = Graph::new();
    let v = g.variable(input.clone())?;
    let out = f(&mut g, v)?;
    g.backward(out)?;
    let analytic = g
        .grad(v)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(input.shape()));
    Ok(compare_gradients(analytic.data(), &numeric, tolerance))
}
