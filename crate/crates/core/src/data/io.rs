//! PNG images and CSV manifests.
//!
//! A dataset on disk is a directory of PNGs plus a manifest with the
//! columns `path,label,partition` (partition optional). Paths are relative
//! to the image directory and double as source ids.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use super::{CropAnnotation, DefectClass, Image, ImageDataset, LabeledImage, Partition};
use crate::error::{Error, Result};

pub fn load_png(path: &Path) -> Result<Image> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let dynimg = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let gray = matches!(
        dynimg.color(),
        image::ColorType::L8 | image::ColorType::L16 | image::ColorType::La8 | image::ColorType::La16
    );
    if gray {
        let buf = dynimg.to_luma8();
        let (w, h) = buf.dimensions();
        let data = buf.into_raw().into_iter().map(|v| f32::from(v) / 255.0).collect();
        Image::new(h as usize, w as usize, 1, data)
    } else {
        let buf = dynimg.to_rgb8();
        let (w, h) = buf.dimensions();
        let data = buf.into_raw().into_iter().map(|v| f32::from(v) / 255.0).collect();
        Image::new(h as usize, w as usize, 3, data)
    }
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn save_png(path: &Path, img: &Image) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let bytes: Vec<u8> = img.data.iter().map(|&v| quantize(v)).collect();
    let (w, h) = (img.width as u32, img.height as u32);
    let err = |source| Error::Image {
        path: path.to_path_buf(),
        source,
    };
    match img.channels {
        1 => image::GrayImage::from_raw(w, h, bytes)
            .expect("buffer size")
            .save(path)
            .map_err(err),
        3 => image::RgbImage::from_raw(w, h, bytes)
            .expect("buffer size")
            .save(path)
            .map_err(err),
        c => Err(Error::InvalidArgument(format!("cannot write {c}-channel PNG"))),
    }
}

fn column(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h.trim().eq_ignore_ascii_case(name))
}

/// Reads a manifest and decodes every listed image.
pub fn load_dataset(image_directory: &Path, manifest: &Path) -> Result<ImageDataset> {
    if !manifest.exists() {
        return Err(Error::MissingFile(manifest.to_path_buf()));
    }
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_path(manifest)?;
    let headers = rdr.headers()?.clone();
    let path_col = column(&headers, "path")
        .ok_or_else(|| Error::InvalidArgument(format!("{}: missing `path` column", manifest.display())))?;
    let label_col = column(&headers, "label")
        .ok_or_else(|| Error::InvalidArgument(format!("{}: missing `label` column", manifest.display())))?;
    let part_col = column(&headers, "partition");
    let mut seen = HashSet::new();
    let mut items = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let rel = rec.get(path_col).unwrap_or("").trim().to_string();
        let label: DefectClass = rec.get(label_col).unwrap_or("").parse()?;
        let partition = match part_col.and_then(|c| rec.get(c)) {
            Some(p) => p.parse()?,
            None => Partition::Unassigned,
        };
        if !seen.insert(rel.clone()) {
            return Err(Error::DuplicateId(rel));
        }
        let full: PathBuf = image_directory.join(&rel);
        let image = load_png(&full)?;
        let mut item = LabeledImage::original(image, label, rel);
        item.partition = partition;
        items.push(item);
    }
    Ok(ImageDataset::new(items))
}

fn file_stem(id: &str) -> String {
    // Ids of loaded datasets are manifest paths; keep only the file stem.
    let id = id.rsplit('/').next().unwrap_or(id);
    let id = id.strip_suffix(".png").unwrap_or(id);
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Writes `images/<id>.png` for every item plus `manifest.csv`; returns the
/// manifest path.
pub fn save_dataset(dir: &Path, dataset: &ImageDataset) -> Result<PathBuf> {
    fs::create_dir_all(dir.join("images"))?;
    let manifest = dir.join("manifest.csv");
    let mut w = csv::Writer::from_path(&manifest)?;
    w.write_record(["path", "label", "partition"])?;
    let mut used = HashSet::new();
    for (i, it) in dataset.items.iter().enumerate() {
        let mut stem = file_stem(&it.source_id);
        if !used.insert(stem.clone()) {
            stem = format!("{stem}-{i}");
            used.insert(stem.clone());
        }
        let rel = format!("images/{stem}.png");
        save_png(&dir.join(&rel), &it.image)?;
        w.write_record([rel.as_str(), it.label.name(), it.partition.name()])?;
    }
    w.flush()?;
    Ok(manifest)
}

/// Crop annotations: CSV `source,x,y,w,h,label`.
pub fn read_annotations(path: &Path) -> Result<Vec<CropAnnotation>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<usize> {
            rec.get(i)
                .unwrap_or("")
                .trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad annotation field {i} in {rec:?}")))
        };
        out.push(CropAnnotation {
            source_id: rec.get(0).unwrap_or("").trim().to_string(),
            x: num(1)?,
            y: num(2)?,
            w: num(3)?,
            h: num(4)?,
            label: rec.get(5).unwrap_or("").parse()?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_manifest(dir: &Path, body: &str) -> PathBuf {
        let p = dir.join("m.csv");
        let mut f = fs::File::create(&p).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn empty_manifest_is_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_manifest(dir.path(), "path,label,partition\n");
        assert!(load_dataset(dir.path(), &m).unwrap().is_empty());
    }

    #[test]
    fn missing_file_named() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_manifest(dir.path(), "path,label\nnope.png,rust\n");
        let err = load_dataset(dir.path(), &m).unwrap_err();
        assert!(err.to_string().contains("nope.png"), "{err}");
    }

    #[test]
    fn unknown_label_and_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        save_png(&dir.path().join("a.png"), &Image::filled(2, 2, 1, 0.5)).unwrap();
        let m = write_manifest(dir.path(), "path,label\na.png,scratch\n");
        assert!(matches!(load_dataset(dir.path(), &m), Err(Error::UnknownLabel(_))));
        let m = write_manifest(dir.path(), "path,label\na.png,0\na.png,1\n");
        assert!(matches!(load_dataset(dir.path(), &m), Err(Error::DuplicateId(_))));
    }

    #[test]
    fn save_and_reload() {
        let dir = tempfile::tempdir().unwrap();
        let rgb = Image::new(2, 2, 3, (0..12).map(|i| i as f32 / 11.0).collect()).unwrap();
        let mut a = LabeledImage::original(rgb.clone(), DefectClass::Rust, "x/1");
        a.partition = Partition::Test;
        let b = LabeledImage::original(Image::filled(2, 2, 1, 0.2), DefectClass::Intact, "y");
        let manifest = save_dataset(dir.path(), &ImageDataset::new(vec![a, b])).unwrap();
        let back = load_dataset(dir.path(), &manifest).unwrap();
        assert_eq!(back.class_counts(), [0, 1, 1]);
        assert_eq!(back.items[0].partition, Partition::Test);
        assert_eq!(back.items[0].image.channels, 3);
        assert_eq!(back.items[1].image.channels, 1);
        for (x, y) in back.items[0].image.data.iter().zip(&rgb.data) {
            assert!((x - y).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn annotations_parse() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        fs::write(&p, "source,x,y,w,h,label\nimg1.png,1,2,30,40,pitting\n").unwrap();
        let a = read_annotations(&p).unwrap();
        assert_eq!(a[0].w, 30);
        assert_eq!(a[0].label, DefectClass::Pitting);
    }
}
