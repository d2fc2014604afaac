use super::{DefectClass, Image, LabeledImage};
use crate::error::{invalid, shape_err, Result};

/// Crops whose longer side exceeds this multiple of the shorter side get a
/// warning: they deform badly when resized to a square.
pub const ASPECT_WARN_RATIO: f64 = 2.0;

/// Rectangle `(x, y, w, h)` in source pixels with its class label.
#[derive(Clone, Debug, PartialEq)]
pub struct CropAnnotation {
    pub source_id: String,
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
    pub label: DefectClass,
}

impl CropAnnotation {
    pub fn aspect_ratio(&self) -> f64 {
        let (a, b) = (self.w.max(self.h) as f64, self.w.min(self.h) as f64);
        a / b
    }
}

#[derive(Clone, Debug, Default)]
pub struct CropOutput {
    pub crops: Vec<LabeledImage>,
    /// Human-readable notes for crops with an unsuitable aspect ratio.
    pub warnings: Vec<String>,
}

fn copy_rect(src: &Image, x: usize, y: usize, w: usize, h: usize) -> Image {
    let c = src.channels;
    let mut data = Vec::with_capacity(w * h * c);
    for row in y..y + h {
        let start = (row * src.width + x) * c;
        data.extend_from_slice(&src.data[start..start + w * c]);
    }
    Image::new(h, w, c, data).expect("rect inside source")
}

/// One exact pixel copy per annotation.
pub fn crop(source: &Image, annotations: &[CropAnnotation]) -> Result<CropOutput> {
    let mut out = CropOutput::default();
    for (i, a) in annotations.iter().enumerate() {
        if a.w == 0 || a.h == 0 {
            return Err(invalid!("annotation {i} on {} has an empty rectangle", a.source_id));
        }
        if a.x + a.w > source.width || a.y + a.h > source.height {
            return Err(shape_err!(
                "annotation {i} rectangle ({}, {}, {}, {}) exceeds {}x{} source {}",
                a.x,
                a.y,
                a.w,
                a.h,
                source.width,
                source.height,
                a.source_id
            ));
        }
        if a.aspect_ratio() > ASPECT_WARN_RATIO {
            let msg = format!(
                "{} crop {i} ({}x{}) has aspect ratio {:.2} > {ASPECT_WARN_RATIO}",
                a.source_id,
                a.w,
                a.h,
                a.aspect_ratio()
            );
            log::warn!("{msg}");
            out.warnings.push(msg);
        }
        let img = copy_rect(source, a.x, a.y, a.w, a.h);
        let id = format!("{}#{}_{}_{}x{}", a.source_id, a.x, a.y, a.w, a.h);
        out.crops.push(LabeledImage::original(img, a.label, id));
    }
    Ok(out)
}

/// Raster-order sliding-window candidates, all labeled intact pending
/// manual review.
pub fn auto_crop(source: &Image, source_id: &str, window: usize, stride: usize) -> Result<Vec<LabeledImage>> {
    if window == 0 || stride == 0 {
        return Err(invalid!("window and stride must be positive"));
    }
    if window > source.width || window > source.height {
        return Err(shape_err!(
            "window {window} larger than {}x{} source {source_id}",
            source.width,
            source.height
        ));
    }
    let ny = (source.height - window) / stride + 1;
    let nx = (source.width - window) / stride + 1;
    let mut out = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (x, y) = (i * stride, j * stride);
            let img = copy_rect(source, x, y, window, window);
            let id = format!("{source_id}@{x}_{y}");
            out.push(LabeledImage::original(img, DefectClass::Intact, id));
        }
    }
    Ok(out)
}

/// CSV with `path,keep`; `keep` is left as the placeholder `yes/no` for a
/// reviewer to resolve.
pub fn review_manifest(paths: &[String]) -> String {
    let mut s = String::from("path,keep\n");
    for p in paths {
        s.push_str(p);
        s.push_str(",yes/no\n");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn source(h: usize, w: usize) -> Image {
        Image::new(h, w, 3, (0..h * w * 3).map(|i| (i % 251) as f32 / 250.0).collect()).unwrap()
    }

    fn ann(x: usize, y: usize, w: usize, h: usize) -> CropAnnotation {
        CropAnnotation {
            source_id: "src".into(),
            x,
            y,
            w,
            h,
            label: DefectClass::Pitting,
        }
    }

    #[test]
    fn full_rectangle_is_identity() {
        let s = source(10, 12);
        let out = crop(&s, &[ann(0, 0, 12, 10)]).unwrap();
        assert_eq!(out.crops[0].image, s);
        assert!(out.warnings.is_empty());
    }

    #[test]
    fn disjoint_rectangles_match_direct_indexing() {
        let s = source(20, 20);
        let rects = [ann(1, 2, 5, 4), ann(10, 11, 6, 6)];
        let out = crop(&s, &rects).unwrap();
        for (r, c) in rects.iter().zip(&out.crops) {
            let mut want = Vec::new();
            for y in r.y..r.y + r.h {
                for x in r.x..r.x + r.w {
                    for ch in 0..3 {
                        want.push(s.get(y, x, ch));
                    }
                }
            }
            let direct = Image::new(r.h, r.w, 3, want).unwrap();
            assert_eq!(c.image.checksum(), direct.checksum());
            assert_eq!(c.label, DefectClass::Pitting);
        }
    }

    #[test]
    fn elongated_rectangle_warns() {
        let s = source(20, 30);
        let out = crop(&s, &[ann(0, 0, 25, 5)]).unwrap();
        assert_eq!(out.crops.len(), 1);
        assert_eq!(out.warnings.len(), 1);
    }

    #[test]
    fn out_of_bounds_rejected() {
        let s = source(10, 10);
        assert!(crop(&s, &[ann(5, 5, 6, 2)]).is_err());
    }

    #[test]
    fn auto_crop_grid_counts() {
        let s = source(192, 192);
        assert_eq!(auto_crop(&s, "s", 96, 96).unwrap().len(), 4);
        assert_eq!(auto_crop(&s, "s", 96, 48).unwrap().len(), 9);
        assert!(auto_crop(&s, "s", 200, 10).is_err());
        let c = auto_crop(&s, "s", 96, 48).unwrap();
        assert!(c.iter().all(|l| l.label == DefectClass::Intact));
        assert_eq!(c[1].source_id, "s@48_0");
    }

    #[test]
    fn review_manifest_lists_paths() {
        let m = review_manifest(&["a.png".into(), "b.png".into()]);
        assert_eq!(m, "path,keep\na.png,yes/no\nb.png,yes/no\n");
    }
}
