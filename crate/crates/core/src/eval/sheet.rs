use std::path::Path;

use crate::data::Image;
use crate::error::{invalid, shape_err, Error, Result};
use crate::rng::RngStream;

/// Row-major tiling; cells past the last image stay black.
pub fn image_grid(images: &[&Image], columns: usize) -> Result<Image> {
    let first = images.first().ok_or_else(|| invalid!("image grid needs at least one image"))?;
    if columns == 0 {
        return Err(invalid!("image grid needs at least one column"));
    }
    if let Some(bad) = images.iter().find(|im| !im.same_dims(first)) {
        return Err(shape_err!(
            "grid cell {}x{}x{} differs from {}x{}x{}",
            bad.height,
            bad.width,
            bad.channels,
            first.height,
            first.width,
            first.channels
        ));
    }
    let cols = columns.min(images.len());
    let rows = images.len().div_ceil(cols);
    let (h, w, c) = (first.height, first.width, first.channels);
    let mut grid = Image::filled(rows * h, cols * w, c, 0.0);
    for (k, im) in images.iter().enumerate() {
        let (oy, ox) = ((k / cols) * h, (k % cols) * w);
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    grid.set(oy + y, ox + x, ch, im.get(y, x, ch));
                }
            }
        }
    }
    Ok(grid)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Origin {
    Real,
    Generated,
}

impl Origin {
    pub fn name(self) -> &'static str {
        match self {
            Origin::Real => "real",
            Origin::Generated => "generated",
        }
    }
}

/// Blinded mixed grid and its answer key.
#[derive(Clone, Debug, PartialEq)]
pub struct TuringSheet {
    pub grid: Image,
    pub columns: usize,
    /// Origin of each grid cell.
    pub key: Vec<Origin>,
    /// Cell `i` shows pooled item `order[i]`: indices below `n` are the
    /// chosen real images, the rest the chosen generated ones.
    pub order: Vec<usize>,
    /// Indices into the input real and generated lists that were chosen.
    pub real_picks: Vec<usize>,
    pub generated_picks: Vec<usize>,
}

pub fn turing_sheet(real: &[&Image], generated: &[&Image], n_per_side: usize, seed: u64) -> Result<TuringSheet> {
    if n_per_side == 0 {
        return Err(invalid!("turing sheet needs at least one image per side"));
    }
    if real.len() < n_per_side || generated.len() < n_per_side {
        return Err(Error::Insufficient(format!(
            "need {n_per_side} images per side, have {} real and {} generated",
            real.len(),
            generated.len()
        )));
    }
    let root = RngStream::new(seed).substream("turing");
    let mut real_picks = root.substream("real").permutation(real.len());
    real_picks.truncate(n_per_side);
    let mut generated_picks = root.substream("generated").permutation(generated.len());
    generated_picks.truncate(n_per_side);
    let order = root.substream("order").permutation(2 * n_per_side);
    let cells: Vec<&Image> = order
        .iter()
        .map(|&k| {
            if k < n_per_side {
                real[real_picks[k]]
            } else {
                generated[generated_picks[k - n_per_side]]
            }
        })
        .collect();
    let key = order
        .iter()
        .map(|&k| if k < n_per_side { Origin::Real } else { Origin::Generated })
        .collect();
    let columns = ((2 * n_per_side) as f64).sqrt().ceil() as usize;
    Ok(TuringSheet {
        grid: image_grid(&cells, columns)?,
        columns,
        key,
        order,
        real_picks,
        generated_picks,
    })
}

impl TuringSheet {
    /// CSV `cell_index,origin`.
    pub fn write_key(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["cell_index", "origin"])?;
        for (i, o) in self.key.iter().enumerate() {
            w.write_record([i.to_string(), o.name().to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// `inverse[k]` is the cell showing pooled item `k`.
    pub fn inverse(&self) -> Vec<usize> {
        let mut inv = vec![0; self.order.len()];
        for (cell, &k) in self.order.iter().enumerate() {
            inv[k] = cell;
        }
        inv
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solid(n: usize, v0: f32) -> Vec<Image> {
        (0..n).map(|i| Image::filled(2, 2, 1, v0 + i as f32 * 0.01)).collect()
    }

    #[test]
    fn grid_counts() {
        let ims = solid(5, 0.5);
        let refs: Vec<&Image> = ims.iter().collect();
        let g = image_grid(&refs, 4).unwrap();
        assert_eq!((g.height, g.width), (4, 8));
        assert_eq!(g.get(3, 7, 0), 0.0);
        assert_eq!(g.get(0, 0, 0), 0.5);
        let one = image_grid(&refs[..1], 8).unwrap();
        assert_eq!(one, ims[0]);
        let ims8 = solid(8, 0.1);
        let r8: Vec<&Image> = ims8.iter().collect();
        assert_eq!(image_grid(&r8, 8).unwrap().height, 2);
        let odd = Image::filled(3, 2, 1, 0.0);
        assert!(image_grid(&[&ims[0], &odd], 2).is_err());
    }

    #[test]
    fn sheet_is_balanced_bijection() {
        let real = solid(10, 0.2);
        let fake = solid(12, 0.6);
        let r: Vec<&Image> = real.iter().collect();
        let f: Vec<&Image> = fake.iter().collect();
        let s = turing_sheet(&r, &f, 8, 3).unwrap();
        assert_eq!(s.key.len(), 16);
        assert_eq!(s.key.iter().filter(|o| **o == Origin::Real).count(), 8);
        let inv = s.inverse();
        for (k, &cell) in inv.iter().enumerate() {
            assert_eq!(s.order[cell], k);
        }
        assert_eq!(s, turing_sheet(&r, &f, 8, 3).unwrap());
        assert!(turing_sheet(&r, &f, 11, 3).is_err());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("key.csv");
        s.write_key(&p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap().lines().count(), 17);
    }
}
