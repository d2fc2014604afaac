//! Procedural stand-ins for surface crops. Intact surfaces are band-limited
//! noise, pitting adds dark elliptical blobs, rust adds reddish mottled
//! patches (brighter speckle in grayscale).

use super::{DefectClass, Image, ImageDataset, LabeledImage};
use crate::rng::RngStream;

/// Background texture: a coarse random grid bilinearly upsampled, plus
/// fine per-pixel noise.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseRecipe {
    pub base_level: f32,
    pub grid_cells: usize,
    pub amplitude: f32,
    pub fine_noise: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlobRecipe {
    pub count: (usize, usize),
    /// Semi-axis range as a fraction of the image side.
    pub radius: (f32, f32),
    /// Darkening at the blob center.
    pub contrast: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchRecipe {
    pub count: (usize, usize),
    pub radius: (f32, f32),
    /// Strength of the reddish tint (or brightening in grayscale).
    pub contrast: f32,
    /// Mottling amplitude inside patches.
    pub mottle: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub image_size: usize,
    pub channels: usize,
    /// Items per class, indexed by class id (pitting, intact, rust).
    pub counts: [usize; 3],
    pub seed: u64,
    pub background: NoiseRecipe,
    pub pitting: BlobRecipe,
    pub rust: PatchRecipe,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            image_size: 96,
            channels: 3,
            counts: [132, 922, 169],
            seed: 0,
            background: NoiseRecipe {
                base_level: 0.55,
                grid_cells: 4,
                amplitude: 0.08,
                fine_noise: 0.03,
            },
            pitting: BlobRecipe {
                count: (2, 4),
                radius: (0.08, 0.18),
                contrast: 0.4,
            },
            rust: PatchRecipe {
                count: (2, 4),
                radius: (0.12, 0.25),
                contrast: 0.35,
                mottle: 0.12,
            },
        }
    }
}

impl SyntheticSpec {
    /// Small fixture with the given side length and counts.
    pub fn fixture(image_size: usize, channels: usize, counts: [usize; 3], seed: u64) -> Self {
        Self {
            image_size,
            channels,
            counts,
            seed,
            ..Self::default()
        }
    }
}

fn value_noise(size: usize, cells: usize, rng: &mut RngStream) -> Vec<f32> {
    let g = cells.max(1) + 1;
    let grid: Vec<f32> = (0..g * g).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
    let mut out = vec![0.0; size * size];
    let scale = cells.max(1) as f32 / size as f32;
    for y in 0..size {
        let fy = (y as f32 + 0.5) * scale;
        let (y0, ty) = (fy.floor() as usize, fy.fract());
        let y1 = (y0 + 1).min(g - 1);
        for x in 0..size {
            let fx = (x as f32 + 0.5) * scale;
            let (x0, tx) = (fx.floor() as usize, fx.fract());
            let x1 = (x0 + 1).min(g - 1);
            let top = grid[y0 * g + x0] * (1.0 - tx) + grid[y0 * g + x1] * tx;
            let bot = grid[y1 * g + x0] * (1.0 - tx) + grid[y1 * g + x1] * tx;
            out[y * size + x] = top * (1.0 - ty) + bot * ty;
        }
    }
    out
}

/// Elliptical falloff in [0, 1] for each pixel, summed over `n` ellipses.
fn ellipse_mask(size: usize, n: usize, radius: (f32, f32), rng: &mut RngStream) -> Vec<f32> {
    let mut mask = vec![0.0f32; size * size];
    let s = size as f32;
    for _ in 0..n {
        let cx = rng.uniform_range(0.15, 0.85) * s;
        let cy = rng.uniform_range(0.15, 0.85) * s;
        let ra = rng.uniform_range(radius.0, radius.1) * s;
        let rb = rng.uniform_range(radius.0, radius.1) * s;
        let angle = rng.uniform_range(0.0, std::f32::consts::PI);
        let (sn, cs) = angle.sin_cos();
        for y in 0..size {
            for x in 0..size {
                let (dx, dy) = (x as f32 + 0.5 - cx, y as f32 + 0.5 - cy);
                let u = (cs * dx + sn * dy) / ra;
                let v = (-sn * dx + cs * dy) / rb;
                let r2 = u * u + v * v;
                if r2 < 1.0 {
                    let m = &mut mask[y * size + x];
                    *m = (*m + (1.0 - r2)).min(1.0);
                }
            }
        }
    }
    mask
}

fn render(spec: &SyntheticSpec, class: DefectClass, rng: &mut RngStream) -> Image {
    let n = spec.image_size;
    let c = spec.channels;
    let bg = &spec.background;
    let coarse = value_noise(n, bg.grid_cells, rng);
    let mut img = Image::filled(n, n, c, 0.0);
    for y in 0..n {
        for x in 0..n {
            let base = bg.base_level + bg.amplitude * coarse[y * n + x];
            for ch in 0..c {
                img.set(y, x, ch, base + bg.fine_noise * rng.normal());
            }
        }
    }
    match class {
        DefectClass::Intact => {}
        DefectClass::Pitting => {
            let r = &spec.pitting;
            let count = r.count.0 + rng.below(r.count.1 - r.count.0 + 1);
            let mask = ellipse_mask(n, count, r.radius, rng);
            for (i, m) in mask.iter().enumerate() {
                for ch in 0..c {
                    img.data[i * c + ch] -= r.contrast * m;
                }
            }
        }
        DefectClass::Rust => {
            let r = &spec.rust;
            let count = r.count.0 + rng.below(r.count.1 - r.count.0 + 1);
            let mask = ellipse_mask(n, count, r.radius, rng);
            let mottle = value_noise(n, (n / 4).max(2), rng);
            for (i, m) in mask.iter().enumerate() {
                let k = m.min(1.0) * (1.0 + r.mottle / r.contrast.max(1e-6) * mottle[i]);
                if c >= 3 {
                    img.data[i * c] += r.contrast * k;
                    img.data[i * c + 1] -= 0.5 * r.contrast * k;
                    img.data[i * c + 2] -= 0.8 * r.contrast * k;
                } else {
                    img.data[i * c] += r.contrast * k;
                }
            }
        }
    }
    img.clamp_unit();
    img
}

/// Deterministic dataset: the same spec always yields bitwise-identical
/// images, and each image depends only on its class and index.
pub fn make_synthetic(spec: &SyntheticSpec) -> ImageDataset {
    let root = RngStream::new(spec.seed);
    let mut items = Vec::new();
    for class in DefectClass::ALL {
        let class_rng = root.substream(class.name());
        for i in 0..spec.counts[class.id()] {
            let mut rng = class_rng.fork(i as u64);
            let img = render(spec, class, &mut rng);
            items.push(LabeledImage::original(img, class, format!("synth-{class}-{i:04}")));
        }
    }
    ImageDataset::new(items)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_counted() {
        let spec = SyntheticSpec::fixture(16, 3, [10, 70, 13], 5);
        let a = make_synthetic(&spec);
        let b = make_synthetic(&spec);
        assert_eq!(a, b);
        assert_eq!(a.class_counts(), [10, 70, 13]);
        assert!(a.items.iter().all(|i| i.image.in_unit_range()));
    }

    #[test]
    fn counts_match_spec() {
        let spec = SyntheticSpec::fixture(8, 1, [100, 700, 128], 1);
        assert_eq!(make_synthetic(&spec).class_counts(), [100, 700, 128]);
    }

    #[test]
    fn classes_differ_in_mean_intensity() {
        let spec = SyntheticSpec::fixture(32, 3, [20, 20, 20], 2);
        let ds = make_synthetic(&spec);
        let mean = |class: DefectClass, ch: usize| -> f32 {
            let imgs: Vec<_> = ds.of_class(class).collect();
            let total: f32 = imgs
                .iter()
                .map(|i| i.image.data.iter().skip(ch).step_by(3).sum::<f32>())
                .sum();
            total / (imgs.len() * 32 * 32) as f32
        };
        assert!(mean(DefectClass::Pitting, 1) < mean(DefectClass::Intact, 1) - 0.02);
        assert!(mean(DefectClass::Rust, 0) > mean(DefectClass::Intact, 0) + 0.02);
    }

    #[test]
    fn item_independent_of_other_counts() {
        let a = make_synthetic(&SyntheticSpec::fixture(8, 1, [3, 1, 1], 7));
        let b = make_synthetic(&SyntheticSpec::fixture(8, 1, [3, 9, 1], 7));
        assert_eq!(a.items[2], b.items[2]);
    }
}
