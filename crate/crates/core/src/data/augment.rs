//! Classical augmentation: flips, rotation, translation and additive noise.

use std::fmt;

use super::{DefectClass, Image, ImageDataset, LabeledImage, Provenance};
use crate::error::{invalid, Error, Result};
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AugmentOp {
    FlipH,
    FlipV,
    /// Counter-clockwise, degrees, about the image center.
    Rotate(f32),
    /// Whole-pixel shift (dx right, dy down) with replicated borders.
    Translate(i32, i32),
    /// Additive N(0, σ²) noise, clamped to [0, 1].
    GaussNoise(f32),
}

impl fmt::Display for AugmentOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AugmentOp::FlipH => write!(f, "flip_h"),
            AugmentOp::FlipV => write!(f, "flip_v"),
            AugmentOp::Rotate(t) => write!(f, "rotate({t})"),
            AugmentOp::Translate(dx, dy) => write!(f, "translate({dx},{dy})"),
            AugmentOp::GaussNoise(s) => write!(f, "gauss_noise({s})"),
        }
    }
}

/// Families the random balancer draws from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AugmentKind {
    Flip,
    Rotate,
    Translate,
    Noise,
}

impl AugmentKind {
    pub const ALL: [AugmentKind; 4] = [
        AugmentKind::Flip,
        AugmentKind::Rotate,
        AugmentKind::Translate,
        AugmentKind::Noise,
    ];
}

impl std::str::FromStr for AugmentKind {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "flip" => Ok(Self::Flip),
            "rotate" => Ok(Self::Rotate),
            "translate" => Ok(Self::Translate),
            "noise" => Ok(Self::Noise),
            other => Err(invalid!("unknown augmentation `{other}` (flip, rotate, translate, noise)")),
        }
    }
}

/// Parameter ranges for randomly drawn operations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentRanges {
    pub max_rotation_deg: f32,
    pub max_shift_px: i32,
    pub max_noise_sigma: f32,
}

impl Default for AugmentRanges {
    fn default() -> Self {
        Self {
            max_rotation_deg: 180.0,
            max_shift_px: 10,
            max_noise_sigma: 0.05,
        }
    }
}

impl AugmentRanges {
    pub fn draw(&self, kind: AugmentKind, rng: &mut RngStream) -> AugmentOp {
        match kind {
            AugmentKind::Flip => {
                if rng.below(2) == 0 {
                    AugmentOp::FlipH
                } else {
                    AugmentOp::FlipV
                }
            }
            AugmentKind::Rotate => {
                let m = self.max_rotation_deg;
                AugmentOp::Rotate(rng.uniform_range(-m, m))
            }
            AugmentKind::Translate => {
                let m = self.max_shift_px;
                let span = (2 * m + 1) as usize;
                let dx = rng.below(span) as i32 - m;
                let dy = rng.below(span) as i32 - m;
                AugmentOp::Translate(dx, dy)
            }
            AugmentKind::Noise => {
                // (0, max]
                let s = self.max_noise_sigma * (1.0 - rng.uniform());
                AugmentOp::GaussNoise(s)
            }
        }
    }
}

fn validate(op: AugmentOp) -> Result<()> {
    match op {
        AugmentOp::Rotate(t) if !t.is_finite() || t.abs() > 360.0 => {
            Err(invalid!("rotation {t} outside [-360, 360] degrees"))
        }
        AugmentOp::Translate(dx, dy) if dx.abs() > 10 || dy.abs() > 10 => {
            Err(invalid!("translation ({dx}, {dy}) exceeds 10 px"))
        }
        AugmentOp::GaussNoise(s) if !(0.0..=0.05).contains(&s) => {
            Err(invalid!("noise sigma {s} outside [0, 0.05]"))
        }
        _ => Ok(()),
    }
}

#[inline]
fn clamped(img: &Image, y: isize, x: isize, c: usize) -> f32 {
    let y = y.clamp(0, img.height as isize - 1) as usize;
    let x = x.clamp(0, img.width as isize - 1) as usize;
    img.get(y, x, c)
}

fn rotate(img: &Image, degrees: f32) -> Image {
    let theta = f64::from(degrees).to_radians();
    let (s, c) = theta.sin_cos();
    let cy = (img.height as f64 - 1.0) / 2.0;
    let cx = (img.width as f64 - 1.0) / 2.0;
    let mut out = img.clone();
    for y in 0..img.height {
        for x in 0..img.width {
            // inverse map: rotate the destination coordinate back by −θ
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let sx = c * dx - s * dy + cx;
            let sy = s * dx + c * dy + cy;
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = ((sx - x0) as f32, (sy - y0) as f32);
            let (x0, y0) = (x0 as isize, y0 as isize);
            for ch in 0..img.channels {
                let top = clamped(img, y0, x0, ch) * (1.0 - fx) + clamped(img, y0, x0 + 1, ch) * fx;
                let bot = clamped(img, y0 + 1, x0, ch) * (1.0 - fx) + clamped(img, y0 + 1, x0 + 1, ch) * fx;
                out.set(y, x, ch, (top * (1.0 - fy) + bot * fy).clamp(0.0, 1.0));
            }
        }
    }
    out
}

/// Applies one operation. Labels and dimensions are untouched by design of
/// the caller; outputs stay in [0, 1].
pub fn augment(image: &Image, op: AugmentOp, rng: &mut RngStream) -> Result<Image> {
    validate(op)?;
    let mut out = image.clone();
    match op {
        AugmentOp::FlipH => {
            for y in 0..image.height {
                for x in 0..image.width {
                    for ch in 0..image.channels {
                        out.set(y, x, ch, image.get(y, image.width - 1 - x, ch));
                    }
                }
            }
        }
        AugmentOp::FlipV => {
            for y in 0..image.height {
                for x in 0..image.width {
                    for ch in 0..image.channels {
                        out.set(y, x, ch, image.get(image.height - 1 - y, x, ch));
                    }
                }
            }
        }
        AugmentOp::Rotate(t) => out = rotate(image, t),
        AugmentOp::Translate(dx, dy) => {
            for y in 0..image.height {
                for x in 0..image.width {
                    for ch in 0..image.channels {
                        let v = clamped(image, y as isize - dy as isize, x as isize - dx as isize, ch);
                        out.set(y, x, ch, v);
                    }
                }
            }
        }
        AugmentOp::GaussNoise(s) => {
            if s > 0.0 {
                for v in out.data.iter_mut() {
                    *v = (*v + s * rng.normal()).clamp(0.0, 1.0);
                }
            }
        }
    }
    Ok(out)
}

/// Fills `items` (all of one class) up to `target` with randomly
/// parameterized operations on randomly chosen members. Originals are kept
/// first, in order.
pub fn balance_class(
    items: &[LabeledImage],
    target: usize,
    pool: &[AugmentKind],
    ranges: &AugmentRanges,
    rng: &mut RngStream,
) -> Result<Vec<LabeledImage>> {
    if items.len() > target {
        return Err(invalid!(
            "target {target} is below the existing count {}",
            items.len()
        ));
    }
    if items.len() == target {
        return Ok(items.to_vec());
    }
    if items.is_empty() {
        return Err(Error::Insufficient("cannot augment an empty class".into()));
    }
    if pool.is_empty() {
        return Err(invalid!("augmentation pool is empty"));
    }
    let mut out = items.to_vec();
    for k in 0..target - items.len() {
        let src = &items[rng.below(items.len())];
        let op = ranges.draw(pool[rng.below(pool.len())], rng);
        let image = augment(&src.image, op, rng)?;
        out.push(LabeledImage {
            image,
            label: src.label,
            source_id: format!("aug:{}:{k}", src.source_id),
            partition: src.partition,
            provenance: Provenance::Augmented {
                source_id: src.source_id.clone(),
                op,
            },
        });
    }
    Ok(out)
}

/// Balances every class present in `trainset` to `target_per_class`.
pub fn balance_classical(
    trainset: &ImageDataset,
    target_per_class: usize,
    pool: &[AugmentKind],
    seed: u64,
) -> Result<ImageDataset> {
    let root = RngStream::new(seed);
    let ranges = AugmentRanges::default();
    let mut out = Vec::new();
    for class in DefectClass::ALL {
        let items: Vec<LabeledImage> = trainset.of_class(class).cloned().collect();
        if items.is_empty() {
            return Err(Error::Insufficient(format!("class {class} is empty")));
        }
        let mut rng = root.substream(class.name());
        out.extend(balance_class(&items, target_per_class, pool, &ranges, &mut rng)?);
    }
    Ok(ImageDataset::new(out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(h: usize, w: usize, c: usize) -> Image {
        let data = (0..h * w * c).map(|i| ((i * 37) % 101) as f32 / 100.0).collect();
        Image::new(h, w, c, data).unwrap()
    }

    #[test]
    fn flips_are_involutions() {
        let img = textured(5, 7, 3);
        let mut r = RngStream::new(0);
        for op in [AugmentOp::FlipH, AugmentOp::FlipV] {
            let once = augment(&img, op, &mut r).unwrap();
            assert_ne!(once, img);
            assert_eq!(augment(&once, op, &mut r).unwrap(), img);
        }
    }

    #[test]
    fn identity_parameters() {
        let img = textured(8, 8, 1);
        let mut r = RngStream::new(0);
        assert_eq!(augment(&img, AugmentOp::Rotate(0.0), &mut r).unwrap(), img);
        assert_eq!(augment(&img, AugmentOp::Translate(0, 0), &mut r).unwrap(), img);
        assert_eq!(augment(&img, AugmentOp::GaussNoise(0.0), &mut r).unwrap(), img);
        let full = augment(&img, AugmentOp::Rotate(360.0), &mut r).unwrap();
        for (a, b) in full.data.iter().zip(&img.data) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn quarter_turn_of_square_is_exact_permutation() {
        let img = textured(4, 4, 1);
        let mut r = RngStream::new(0);
        let rot = augment(&img, AugmentOp::Rotate(90.0), &mut r).unwrap();
        // Inverse map sends (x, y) to (cx − (y − cy), cy + (x − cx)).
        for y in 0..4 {
            for x in 0..4 {
                assert!((rot.get(y, x, 0) - img.get(x, 3 - y, 0)).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn translate_replicates_edges() {
        let img = textured(6, 6, 1);
        let mut r = RngStream::new(0);
        let t = augment(&img, AugmentOp::Translate(2, 0), &mut r).unwrap();
        assert_eq!(t.get(3, 0, 0), img.get(3, 0, 0));
        assert_eq!(t.get(3, 1, 0), img.get(3, 0, 0));
        assert_eq!(t.get(3, 5, 0), img.get(3, 3, 0));
    }

    #[test]
    fn invalid_ranges_rejected() {
        let img = textured(4, 4, 1);
        let mut r = RngStream::new(0);
        assert!(augment(&img, AugmentOp::Translate(11, 0), &mut r).is_err());
        assert!(augment(&img, AugmentOp::GaussNoise(0.5), &mut r).is_err());
        assert!(augment(&img, AugmentOp::Rotate(f32::NAN), &mut r).is_err());
    }

    fn class_items(class: DefectClass, n: usize) -> Vec<LabeledImage> {
        (0..n)
            .map(|i| LabeledImage::original(textured(6, 6, 3), class, format!("{class}{i}")))
            .collect()
    }

    #[test]
    fn balance_to_target() {
        let mut items = class_items(DefectClass::Pitting, 100);
        items.extend(class_items(DefectClass::Intact, 700));
        items.extend(class_items(DefectClass::Rust, 128));
        let ds = ImageDataset::new(items);
        let out = balance_classical(&ds, 700, &AugmentKind::ALL, 3).unwrap();
        assert_eq!(out.class_counts(), [700, 700, 700]);
        let pit: Vec<_> = out.of_class(DefectClass::Pitting).collect();
        assert_eq!(pit.iter().filter(|i| i.is_real()).count(), 100);
        let intact: Vec<_> = out.of_class(DefectClass::Intact).cloned().collect();
        assert_eq!(intact, ds.of_class(DefectClass::Intact).cloned().collect::<Vec<_>>());
        assert!(out.items.iter().all(|i| i.image.in_unit_range() && i.image.height == 6));
    }

    #[test]
    fn single_source_provenance() {
        let items = class_items(DefectClass::Rust, 1);
        let mut r = RngStream::new(4);
        let out = balance_class(&items, 10, &AugmentKind::ALL, &AugmentRanges::default(), &mut r).unwrap();
        assert_eq!(out.len(), 10);
        for it in &out[1..] {
            match &it.provenance {
                Provenance::Augmented { source_id, .. } => assert_eq!(source_id, "rust0"),
                p => panic!("unexpected {p:?}"),
            }
            assert_eq!(it.label, DefectClass::Rust);
        }
    }

    #[test]
    fn empty_class_errors() {
        let ds = ImageDataset::new(class_items(DefectClass::Intact, 3));
        assert!(balance_classical(&ds, 5, &AugmentKind::ALL, 1).is_err());
    }
}
