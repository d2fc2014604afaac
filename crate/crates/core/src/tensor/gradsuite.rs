//! Finite-difference checks for every differentiable layer, plus the
//! conv/transposed-conv adjoint identity. Shared by unit tests, property
//! tests and the acceptance target.

use super::gradcheck::{gradient_check, GradCheckReport};
use super::{BatchNormStats, Graph, Mode, Tensor, Var};
use crate::error::{shape_err, Result};
use crate::rng::RngStream;

/// Tolerance on `‖analytic − numeric‖∞ / ‖numeric‖∞`.
pub const GRAD_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct LayerCheck {
    pub name: &'static str,
    pub report: GradCheckReport,
}

// Reduces a layer output to `Σ yᵢ·rᵢ`. `r` is made orthogonal to the
// unperturbed output so the scalar sits near zero, keeping its single
// precision rounding far below the perturbation signal.
fn project(g: &mut Graph, y: Var, r: &Tensor) -> Result<Var> {
    let c = g.input(r.clone())?;
    let p = g.mul(y, c)?;
    g.sum(p)
}

fn orthogonalized(r: &Tensor, y0: &Tensor) -> Tensor {
    let yy = y0.dot(y0);
    if yy == 0.0 {
        return r.clone();
    }
    let k = r.dot(y0) / yy;
    let data = r.data().iter().zip(y0.data()).map(|(&a, &b)| (f64::from(a) - k * f64::from(b)) as f32).collect();
    Tensor::new(r.shape(), data).expect("same shape")
}

// The offset keeps sums of weights (bias and β gradients) away from zero.
fn weights_for(shape: &[usize], rng: &mut RngStream) -> Tensor {
    Tensor::randn(shape, 1.0, rng).map(|v| v + 0.5)
}

// Moves values at least `gap` away from zero; ReLU-type kinks would
// otherwise fall inside the difference stencil.
fn off_kink(mut t: Tensor, gap: f32) -> Tensor {
    for v in t.data_mut() {
        *v += gap.copysign(*v);
    }
    t
}

// Distinct values spaced well beyond the stencil so max-pool winners are
// unique and stable under perturbation.
fn spaced(shape: &[usize], rng: &mut RngStream) -> Tensor {
    let n: usize = shape.iter().product();
    let perm = rng.permutation(n);
    Tensor::from_fn(shape, |i| perm[i] as f32 * 0.05 - n as f32 * 0.025)
}

fn check<F>(name: &'static str, input: &Tensor, f: F) -> Result<LayerCheck>
where
    F: FnMut(&mut Graph, Var) -> Result<Var>,
{
    Ok(LayerCheck { name, report: gradient_check(f, input, GRAD_TOLERANCE)? })
}

// Checks a tensor-valued layer through the orthogonalized projection.
fn check_layer<F>(name: &'static str, input: &Tensor, r: &Tensor, mut layer: F) -> Result<LayerCheck>
where
    F: FnMut(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let v = g.input(input.clone())?;
    let y = layer(&mut g, v)?;
    let r = orthogonalized(r, g.value(y));
    check(name, input, |g, v| {
        let y = layer(g, v)?;
        project(g, y, &r)
    })
}

/// Runs every layer check for one seed.
pub fn layer_gradient_suite(seed: u64) -> Result<Vec<LayerCheck>> {
    let mut rng = RngStream::new(seed).substream("gradsuite");
    let mut out = Vec::new();

    for (stride, padding, name_x, name_w) in [(1, 1, "conv2d/x s1", "conv2d/w s1"), (2, 1, "conv2d/x s2", "conv2d/w s2")] {
        let x = Tensor::randn(&[2, 2, 5, 5], 1.0, &mut rng);
        let w = Tensor::randn(&[3, 2, 3, 3], 0.5, &mut rng);
        let b = Tensor::randn(&[3], 0.5, &mut rng);
        let oh = super::conv_output_size(5, 3, stride, padding)?;
        let r = weights_for(&[2, 3, oh, oh], &mut rng);
        out.push(check_layer(name_x, &x, &r, |g, v| {
            let (w, b) = (g.input(w.clone())?, g.input(b.clone())?);
            let y = g.conv2d(v, w, b, stride, padding)?;
            Ok(y)
        })?);
        out.push(check_layer(name_w, &w, &r, |g, v| {
            let (x, b) = (g.input(x.clone())?, g.input(b.clone())?);
            let y = g.conv2d(x, v, b, stride, padding)?;
            Ok(y)
        })?);
        out.push(check_layer("conv2d/b", &b, &r, |g, v| {
            let (x, w) = (g.input(x.clone())?, g.input(w.clone())?);
            let y = g.conv2d(x, w, v, stride, padding)?;
            Ok(y)
        })?);
    }

    {
        let x = Tensor::randn(&[2, 3, 3, 3], 1.0, &mut rng);
        let w = Tensor::randn(&[3, 2, 4, 4], 0.5, &mut rng);
        let b = Tensor::randn(&[2], 0.5, &mut rng);
        let r = weights_for(&[2, 2, 6, 6], &mut rng);
        out.push(check_layer("conv2d_transpose/x", &x, &r, |g, v| {
            let (w, b) = (g.input(w.clone())?, g.input(b.clone())?);
            let y = g.conv2d_transpose(v, w, b, 2, 1)?;
            Ok(y)
        })?);
        out.push(check_layer("conv2d_transpose/w", &w, &r, |g, v| {
            let (x, b) = (g.input(x.clone())?, g.input(b.clone())?);
            let y = g.conv2d_transpose(x, v, b, 2, 1)?;
            Ok(y)
        })?);
        out.push(check_layer("conv2d_transpose/b", &b, &r, |g, v| {
            let (x, w) = (g.input(x.clone())?, g.input(w.clone())?);
            let y = g.conv2d_transpose(x, w, v, 2, 1)?;
            Ok(y)
        })?);
    }

    {
        let x = Tensor::randn(&[4, 3, 2, 2], 1.0, &mut rng);
        let gamma = Tensor::from_fn(&[3], |i| 0.5 + i as f32 * 0.3);
        let beta = Tensor::randn(&[3], 0.5, &mut rng);
        let r = weights_for(&[4, 3, 2, 2], &mut rng);
        let mut stats = BatchNormStats::new(3);
        out.push(check_layer("batch_norm/x", &x, &r, |g, v| {
            let (ga, be) = (g.input(gamma.clone())?, g.input(beta.clone())?);
            let y = g.batch_norm(v, ga, be, &mut stats, Mode::Train, false)?;
            Ok(y)
        })?);
        out.push(check_layer("batch_norm/gamma", &gamma, &r, |g, v| {
            let (xv, be) = (g.input(x.clone())?, g.input(beta.clone())?);
            let y = g.batch_norm(xv, v, be, &mut stats, Mode::Train, false)?;
            Ok(y)
        })?);
        out.push(check_layer("batch_norm/beta", &beta, &r, |g, v| {
            let (xv, ga) = (g.input(x.clone())?, g.input(gamma.clone())?);
            let y = g.batch_norm(xv, ga, v, &mut stats, Mode::Train, false)?;
            Ok(y)
        })?);
        let x2 = Tensor::randn(&[6, 4], 1.0, &mut rng);
        let r2 = weights_for(&[6, 4], &mut rng);
        let mut stats2 = BatchNormStats::new(4);
        let (ga2, be2) = (Tensor::full(&[4], 1.3), Tensor::zeros(&[4]));
        out.push(check_layer("batch_norm/x dense", &x2, &r2, |g, v| {
            let (ga, be) = (g.input(ga2.clone())?, g.input(be2.clone())?);
            let y = g.batch_norm(v, ga, be, &mut stats2, Mode::Train, false)?;
            Ok(y)
        })?);
    }

    {
        let x = Tensor::randn(&[3, 5], 1.0, &mut rng);
        let w = Tensor::randn(&[5, 4], 0.5, &mut rng);
        let b = Tensor::randn(&[4], 0.5, &mut rng);
        let r = weights_for(&[3, 4], &mut rng);
        out.push(check_layer("dense/x", &x, &r, |g, v| {
            let (w, b) = (g.input(w.clone())?, g.input(b.clone())?);
            let y = g.dense(v, w, b)?;
            Ok(y)
        })?);
        out.push(check_layer("dense/w", &w, &r, |g, v| {
            let (x, b) = (g.input(x.clone())?, g.input(b.clone())?);
            let y = g.dense(x, v, b)?;
            Ok(y)
        })?);
        out.push(check_layer("dense/b", &b, &r, |g, v| {
            let (x, w) = (g.input(x.clone())?, g.input(w.clone())?);
            let y = g.dense(x, w, v)?;
            Ok(y)
        })?);
    }

    {
        let x = spaced(&[2, 2, 4, 4], &mut rng);
        let r = weights_for(&[2, 2, 2, 2], &mut rng);
        out.push(check_layer("max_pool2d", &x, &r, |g, v| {
            let y = g.max_pool2d(v, 2)?;
            Ok(y)
        })?);
    }

    {
        let shape = [3, 6];
        let r = weights_for(&shape, &mut rng);
        let kinked = off_kink(Tensor::randn(&shape, 1.0, &mut rng), 0.01);
        let smooth = Tensor::randn(&shape, 1.0, &mut rng);
        out.push(check_layer("relu", &kinked, &r, |g, v| {
            let y = g.relu(v)?;
            Ok(y)
        })?);
        out.push(check_layer("leaky_relu", &kinked, &r, |g, v| {
            let y = g.leaky_relu(v, 0.2)?;
            Ok(y)
        })?);
        out.push(check_layer("sigmoid", &smooth, &r, |g, v| {
            let y = g.sigmoid(v)?;
            Ok(y)
        })?);
        out.push(check_layer("tanh", &smooth, &r, |g, v| {
            let y = g.tanh(v)?;
            Ok(y)
        })?);
        out.push(check_layer("softmax", &smooth, &r, |g, v| {
            let y = g.softmax(v)?;
            Ok(y)
        })?);
    }

    {
        // Probabilities directly: through a sigmoid, single precision
        // cancellation in 1 − p dominates the difference quotient.
        let probs = Tensor::rand_uniform(&[5, 1], 0.05, 0.95, &mut rng);
        let target = Tensor::from_fn(&[5, 1], |i| [0.85, 0.0, 1.0, 0.15, 0.5][i]);
        out.push(check("bce_loss", &probs, |g, v| g.bce_loss(v, &target))?);
        let logits = Tensor::randn(&[4, 3], 1.0, &mut rng);
        let onehot = Tensor::from_fn(&[4, 3], |i| if i % 3 == (i / 3) % 3 { 1.0 } else { 0.0 });
        out.push(check("cross_entropy", &logits, |g, v| {
            let p = g.softmax(v)?;
            g.cross_entropy(p, &onehot)
        })?);
    }

    Ok(out)
}

/// Largest gap in `⟨conv(x), y⟩ = ⟨x, convᵀ(y)⟩`, relative to `‖conv(x)‖·‖y‖`, over a few
/// geometries, with shared weights and zero bias.
pub fn conv_adjoint_gap(seed: u64) -> Result<f64> {
    let mut rng = RngStream::new(seed).substream("adjoint");
    let mut worst = 0.0f64;
    // (size, kernel, stride, padding); sizes chosen so the transposed
    // output recovers the input size exactly.
    for (h, k, s, p) in [(6, 3, 1, 1), (8, 4, 2, 1), (7, 3, 2, 1), (9, 5, 2, 2), (5, 1, 1, 0)] {
        let (ic, oc, n) = (3, 4, 2);
        let x = Tensor::randn(&[n, ic, h, h], 1.0, &mut rng);
        let w = Tensor::randn(&[oc, ic, k, k], 1.0, &mut rng);
        let oh = super::conv_output_size(h, k, s, p)?;
        let y = Tensor::randn(&[n, oc, oh, oh], 1.0, &mut rng);
        let mut g = Graph::new();
        let (xv, wv, yv) = (g.input(x.clone())?, g.input(w)?, g.input(y.clone())?);
        let (b_out, b_in) = (g.input(Tensor::zeros(&[oc]))?, g.input(Tensor::zeros(&[ic]))?);
        let ax = g.conv2d(xv, wv, b_out, s, p)?;
        let aty = g.conv2d_transpose(yv, wv, b_in, s, p)?;
        if g.shape(aty) != x.shape() {
            return Err(shape_err!(
                "adjoint geometry {h}/{k}/{s}/{p} does not round-trip"
            ));
        }
        let (ax, aty) = (g.value(ax), g.value(aty));
        let lhs = ax.dot(&y);
        let rhs = x.dot(aty);
        // Scaled by the Cauchy-Schwarz bound: random y is nearly orthogonal
        // to Ax, so |<y, Ax>| itself can be tiny next to the f32 rounding.
        let norm = |t: &Tensor| t.dot(t).sqrt();
        let scale = (norm(ax) * norm(&y)).max(norm(&x) * norm(aty)).max(1e-12);
        let gap = (lhs - rhs).abs() / scale;
        worst = worst.max(gap);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_layer_passes_for_one_seed() {
        for c in layer_gradient_suite(3).unwrap() {
            assert!(c.report.passed, "{}: {:?}", c.name, c.report);
        }
    }

    #[test]
    fn adjoint_one_seed() {
        assert!(conv_adjoint_gap(3).unwrap() < 1e-5);
    }
}
