use super::{sample_latents, Generator};
use crate::data::Image;
use crate::error::{invalid, shape_err, Result};
use crate::tensor::Tensor;

fn ratios(steps: usize) -> Result<Vec<f32>> {
    if steps < 2 {
        return Err(invalid!("interpolation needs at least 2 steps, got {steps}"));
    }
    let last = (steps - 1) as f32;
    Ok((0..steps).map(|i| i as f32 / last).collect())
}

/// Images for `(1−t)·z_a + t·z_b` at evenly spaced `t` in [0, 1].
pub fn interpolate_latent(gen: &mut Generator, z_a: &[f32], z_b: &[f32], steps: usize) -> Result<Vec<Image>> {
    let d = gen.latent_size();
    if z_a.len() != d || z_b.len() != d {
        return Err(shape_err!(
            "latent endpoints have {} and {} entries, generator expects {d}",
            z_a.len(),
            z_b.len()
        ));
    }
    let ts = ratios(steps)?;
    let mut data = Vec::with_capacity(steps * d);
    for &t in &ts {
        data.extend(z_a.iter().zip(z_b).map(|(a, b)| (1.0 - t) * a + t * b));
    }
    sample_latents(gen, &Tensor::new(&[steps, d], data)?)
}

/// Pixelwise blend `(1−t)·a + t·b`, the naive baseline for latent
/// interpolation.
pub fn crossfade_pixels(a: &Image, b: &Image, steps: usize) -> Result<Vec<Image>> {
    if !a.same_dims(b) {
        return Err(shape_err!(
            "crossfade needs equal shapes, got {}x{}x{} and {}x{}x{}",
            a.height,
            a.width,
            a.channels,
            b.height,
            b.width,
            b.channels
        ));
    }
    let ts = ratios(steps)?;
    ts.iter()
        .map(|&t| {
            let data = a.data.iter().zip(&b.data).map(|(x, y)| (1.0 - t) * x + t * y).collect();
            Image::new(a.height, a.width, a.channels, data)
        })
        .collect()
}
