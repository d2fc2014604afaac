//! Image datasets: ingestion, cropping, resizing, splitting, classical
//! augmentation and deterministic synthetic fixtures.

mod augment;
mod crop;
mod io;
mod resize;
mod split;
mod synthetic;

pub use augment::{augment, balance_class, balance_classical, AugmentKind, AugmentOp, AugmentRanges};
pub use crop::{auto_crop, crop, review_manifest, CropAnnotation, CropOutput, ASPECT_WARN_RATIO};
pub use io::{load_dataset, load_png, read_annotations, save_dataset, save_png};
pub use resize::resize;
pub use split::split;
pub use synthetic::{make_synthetic, BlobRecipe, NoiseRecipe, PatchRecipe, SyntheticSpec};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Surface class, with the numeric ids used throughout (pitting=0,
/// intact=1, rust=2).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DefectClass {
    Pitting = 0,
    Intact = 1,
    Rust = 2,
}

impl DefectClass {
    pub const ALL: [DefectClass; 3] = [DefectClass::Pitting, DefectClass::Intact, DefectClass::Rust];
    pub const FAILURES: [DefectClass; 2] = [DefectClass::Pitting, DefectClass::Rust];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Result<Self> {
        Self::ALL
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownLabel(id.to_string()))
    }

    pub fn name(self) -> &'static str {
        match self {
            DefectClass::Pitting => "pitting",
            DefectClass::Intact => "intact",
            DefectClass::Rust => "rust",
        }
    }
}

impl fmt::Display for DefectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DefectClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "0" | "pitting" => Ok(DefectClass::Pitting),
            "1" | "intact" => Ok(DefectClass::Intact),
            "2" | "rust" => Ok(DefectClass::Rust),
            other => Err(Error::UnknownLabel(other.to_string())),
        }
    }
}

/// `height × width × channels` pixels in [0, 1], interleaved (HWC).
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(shape_err!("image dimensions must be positive"));
        }
        if data.len() != height * width * channels {
            return Err(shape_err!(
                "{height}x{width}x{channels} image needs {} values, got {}",
                height * width * channels,
                data.len()
            ));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn in_unit_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }

    pub fn clamp_unit(&mut self) {
        self.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }

    /// 64-bit FNV-1a hash of the pixel bit patterns.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in &self.data {
            for b in v.to_bits().to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }
}

/// How an item came to exist.
#[derive(Clone, Debug, PartialEq)]
pub enum Provenance {
    Original,
    Augmented { source_id: String, op: AugmentOp },
    Generated { generator: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Partition {
    Train,
    Test,
    Unassigned,
}

impl Partition {
    pub fn name(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Test => "test",
            Partition::Unassigned => "",
        }
    }
}

impl FromStr for Partition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Partition::Train),
            "test" => Ok(Partition::Test),
            "" => Ok(Partition::Unassigned),
            other => Err(Error::InvalidArgument(format!("unknown partition `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    pub image: Image,
    pub label: DefectClass,
    pub source_id: String,
    pub partition: Partition,
    pub provenance: Provenance,
}

impl LabeledImage {
    pub fn original(image: Image, label: DefectClass, source_id: impl Into<String>) -> Self {
        Self {
            image,
            label,
            source_id: source_id.into(),
            partition: Partition::Unassigned,
            provenance: Provenance::Original,
        }
    }

    pub fn is_generated(&self) -> bool {
        matches!(self.provenance, Provenance::Generated { .. })
    }

    pub fn is_real(&self) -> bool {
        matches!(self.provenance, Provenance::Original)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ImageDataset {
    pub items: Vec<LabeledImage>,
}

impl ImageDataset {
    pub fn new(items: Vec<LabeledImage>) -> Self {
        Self { items }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Counts indexed by class id: (pitting, intact, rust).
    pub fn class_counts(&self) -> [usize; 3] {
        let mut counts = [0; 3];
        for it in &self.items {
            counts[it.label.id()] += 1;
        }
        counts
    }

    pub fn of_class(&self, class: DefectClass) -> impl Iterator<Item = &LabeledImage> {
        self.items.iter().filter(move |it| it.label == class)
    }

    pub fn class_subset(&self, class: DefectClass) -> ImageDataset {
        ImageDataset::new(self.of_class(class).cloned().collect())
    }

    pub fn images(&self) -> Vec<&Image> {
        self.items.iter().map(|it| &it.image).collect()
    }

    pub fn labels(&self) -> Vec<DefectClass> {
        self.items.iter().map(|it| it.label).collect()
    }

    pub fn extend(&mut self, other: ImageDataset) {
        self.items.extend(other.items);
    }
}

/// Packs images into an `(N, C, H, W)` tensor, mapping pixel `v` to
/// `v·scale + offset`.
pub fn images_to_tensor(images: &[&Image], scale: f32, offset: f32) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| shape_err!("no images to pack"))?;
    let (h, w, c) = (first.height, first.width, first.channels);
    let mut data = Vec::with_capacity(images.len() * h * w * c);
    for img in images {
        if !img.same_dims(first) {
            return Err(shape_err!(
                "image {}x{}x{} differs from {h}x{w}x{c}",
                img.height,
                img.width,
                img.channels
            ));
        }
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    data.push(img.get(y, x, ch) * scale + offset);
                }
            }
        }
    }
    Tensor::new(&[images.len(), c, h, w], data)
}

/// Inverse of [`images_to_tensor`]: `v = (t − offset)/scale`, clamped to [0, 1].
pub fn tensor_to_images(t: &Tensor, scale: f32, offset: f32) -> Result<Vec<Image>> {
    let (n, c, h, w) = match *t.shape() {
        [n, c, h, w] => (n, c, h, w),
        ref s => return Err(shape_err!("expected NCHW tensor, got {s:?}")),
    };
    let plane = h * w;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut img = Image::filled(h, w, c, 0.0);
        for ch in 0..c {
            let base = (i * c + ch) * plane;
            for y in 0..h {
                for x in 0..w {
                    let v = (t.data()[base + y * w + x] - offset) / scale;
                    img.set(y, x, ch, v.clamp(0.0, 1.0));
                }
            }
        }
        out.push(img);
    }
    Ok(out)
}
