//! Evaluation of generated images: Fréchet distance over pluggable
//! features, t-SNE embeddings, image grids and blinded inspection sheets.

mod features;
pub mod linalg;
mod sheet;
mod stats;
mod tsne;

pub use features::{read_feature_csv, write_feature_csv, FeatureExtractor, PcaModel};
pub use sheet::{image_grid, turing_sheet, Origin, TuringSheet};
pub use stats::{frechet_distance, gaussian_stats, GaussianStats};
pub use tsne::{calibrate, convex_hull_area, effective_perplexity, silhouette, tsne, Embedding2D, TsneConfig, TsneResult};

use crate::data::Image;
use crate::error::{invalid, shape_err, Result};
use crate::gan::{sample, Generator};
use crate::rng::RngStream;

/// Row-major `rows × cols` matrix of f64 features.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(shape_err!("{} values for a {rows}x{cols} matrix", data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>], cols: usize) -> Result<Self> {
        if let Some(r) = rows.iter().find(|r| r.len() != cols) {
            return Err(shape_err!("row of length {} in a {cols}-column matrix", r.len()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn concat(&self, other: &FeatureMatrix) -> Result<Self> {
        if self.cols != other.cols {
            return Err(shape_err!("cannot stack {} and {} columns", self.cols, other.cols));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Self::new(self.rows + other.rows, self.cols, data)
    }
}

/// Fréchet distance between feature fits of two image sets. The extractor
/// must already be fitted.
pub fn fid_between(extractor: &mut FeatureExtractor, real: &[&Image], generated: &[&Image]) -> Result<f64> {
    let a = gaussian_stats(&extractor.extract(real)?)?;
    let b = gaussian_stats(&extractor.extract(generated)?)?;
    frechet_distance(&a, &b)
}

/// Mean and sample standard deviation of the distance over `repeats`
/// fresh draws of `|real|` images from `draw` (0 for a single repeat).
pub fn fid_repeated_with(
    real: &[&Image],
    extractor: &mut FeatureExtractor,
    repeats: usize,
    rng: &mut RngStream,
    mut draw: impl FnMut(usize, &mut RngStream) -> Result<Vec<Image>>,
) -> Result<(f64, f64)> {
    if repeats == 0 {
        return Err(invalid!("repeats must be >= 1"));
    }
    let real_stats = gaussian_stats(&extractor.extract(real)?)?;
    let mut scores = Vec::with_capacity(repeats);
    for r in 0..repeats {
        let mut sub = rng.fork(r as u64);
        let generated = draw(real.len(), &mut sub)?;
        let refs: Vec<&Image> = generated.iter().collect();
        let gen_stats = gaussian_stats(&extractor.extract(&refs)?)?;
        scores.push(frechet_distance(&real_stats, &gen_stats)?);
    }
    let mean = scores.iter().sum::<f64>() / repeats as f64;
    let std = if repeats > 1 {
        (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (repeats - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok((mean, std))
}

/// Repeated FID of a generator against the real set with count parity.
pub fn fid_repeated(
    gen: &mut Generator,
    real: &[&Image],
    extractor: &mut FeatureExtractor,
    repeats: usize,
    rng: &mut RngStream,
) -> Result<(f64, f64)> {
    fid_repeated_with(real, extractor, repeats, rng, |n, r| sample(gen, n, r))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pass_through_generator_scores_zero() {
        let mut rng = RngStream::new(1);
        let real: Vec<Image> = (0..12)
            .map(|_| Image::new(2, 2, 1, (0..4).map(|_| rng.uniform()).collect()).unwrap())
            .collect();
        let refs: Vec<&Image> = real.iter().collect();
        let mut fx = FeatureExtractor::pixel_pca(3);
        fx.fit(&refs).unwrap();
        let (mean, std) = fid_repeated_with(&refs, &mut fx, 3, &mut rng, |_, _| Ok(real.clone())).unwrap();
        assert!(mean < 1e-6);
        assert!(std < 1e-6);
        let (_, s1) = fid_repeated_with(&refs, &mut fx, 1, &mut rng, |_, r| {
            Ok((0..12).map(|_| Image::filled(2, 2, 1, r.uniform())).collect())
        })
        .unwrap();
        assert_eq!(s1, 0.0);
    }
}
