use std::path::Path;

use super::linalg::symmetric_eigen;
use super::FeatureMatrix;
use crate::classifier::ClfNet;
use crate::data::Image;
use crate::error::{invalid, shape_err, Error, Result};

/// Linear projection of flattened pixels onto the leading principal axes of
/// a reference set.
#[derive(Clone, Debug, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `dim` rows of length `pixels`, unit norm.
    pub components: Vec<Vec<f64>>,
    pub pixels: usize,
}

fn flatten(img: &Image) -> Vec<f64> {
    img.data.iter().map(|&v| f64::from(v)).collect()
}

impl PcaModel {
    /// Uses the `n×n` Gram matrix when there are more pixels than images.
    pub fn fit(images: &[&Image], dim: usize) -> Result<Self> {
        let n = images.len();
        if n < 2 {
            return Err(Error::Insufficient(format!("pixel PCA needs at least 2 images, got {n}")));
        }
        let pixels = images[0].data.len();
        if images.iter().any(|im| !im.same_dims(images[0])) {
            return Err(shape_err!("pixel PCA needs images of one shape"));
        }
        let dim = dim.min(pixels);
        if dim == 0 {
            return Err(invalid!("PCA dimension must be positive"));
        }
        let mut mean = vec![0.0; pixels];
        for im in images {
            for (m, v) in mean.iter_mut().zip(&im.data) {
                *m += f64::from(*v);
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let x: Vec<Vec<f64>> = images
            .iter()
            .map(|im| flatten(im).iter().zip(&mean).map(|(v, m)| v - m).collect())
            .collect();
        let mut components = Vec::with_capacity(dim);
        if pixels <= n {
            let mut cov = vec![0.0; pixels * pixels];
            for row in &x {
                for i in 0..pixels {
                    if row[i] == 0.0 {
                        continue;
                    }
                    for j in i..pixels {
                        cov[i * pixels + j] += row[i] * row[j];
                    }
                }
            }
            for i in 0..pixels {
                for j in 0..i {
                    cov[i * pixels + j] = cov[j * pixels + i];
                }
            }
            let (_, vecs) = symmetric_eigen(&cov, pixels)?;
            for k in 0..dim {
                components.push((0..pixels).map(|r| vecs[r * pixels + k]).collect());
            }
        } else {
            let mut gram = vec![0.0; n * n];
            for i in 0..n {
                for j in i..n {
                    let v: f64 = x[i].iter().zip(&x[j]).map(|(a, b)| a * b).sum();
                    gram[i * n + j] = v;
                    gram[j * n + i] = v;
                }
            }
            let (vals, vecs) = symmetric_eigen(&gram, n)?;
            for k in 0..dim.min(n) {
                let mut c = vec![0.0; pixels];
                for (i, row) in x.iter().enumerate() {
                    let u = vecs[i * n + k];
                    for (cj, xj) in c.iter_mut().zip(row) {
                        *cj += u * xj;
                    }
                }
                let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
                if vals[k] <= 0.0 || norm == 0.0 {
                    c.iter_mut().for_each(|v| *v = 0.0);
                } else {
                    c.iter_mut().for_each(|v| *v /= norm);
                }
                components.push(c);
            }
            while components.len() < dim {
                components.push(vec![0.0; pixels]);
            }
        }
        // Fix signs so the largest-magnitude entry of each axis is positive.
        for c in &mut components {
            let big = c.iter().copied().fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
            if big < 0.0 {
                c.iter_mut().for_each(|v| *v = -*v);
            }
        }
        Ok(Self { mean, components, pixels })
    }

    pub fn project(&self, img: &Image) -> Result<Vec<f64>> {
        if img.data.len() != self.pixels {
            return Err(shape_err!(
                "image has {} values, PCA was fitted on {}",
                img.data.len(),
                self.pixels
            ));
        }
        let x: Vec<f64> = flatten(img).iter().zip(&self.mean).map(|(v, m)| v - m).collect();
        Ok(self
            .components
            .iter()
            .map(|c| c.iter().zip(&x).map(|(a, b)| a * b).sum())
            .collect())
    }
}

/// Image embedding used for Fréchet distances and t-SNE.
#[derive(Clone, Debug)]
pub enum FeatureExtractor {
    /// Principal components of raw pixels; must be fitted on real images.
    PixelPca { dim: usize, model: Option<PcaModel> },
    /// Dense hidden layer of a trained classifier.
    ClassifierPenultimate(Box<ClfNet>),
    /// Precomputed rows, returned in order for an equally long image list.
    External(FeatureMatrix),
}

impl FeatureExtractor {
    pub fn pixel_pca(dim: usize) -> Self {
        Self::PixelPca { dim, model: None }
    }

    pub fn external(path: &Path) -> Result<Self> {
        Ok(Self::External(read_feature_csv(path)?))
    }

    /// Fits the pixel PCA on the reference (real) set; no-op otherwise.
    pub fn fit(&mut self, real: &[&Image]) -> Result<()> {
        if let Self::PixelPca { dim, model } = self {
            *model = Some(PcaModel::fit(real, *dim)?);
        }
        Ok(())
    }

    pub fn dim(&self) -> Option<usize> {
        match self {
            Self::PixelPca { dim, .. } => Some(*dim),
            Self::ClassifierPenultimate(net) => Some(net.hidden.weight.value.shape()[1]),
            Self::External(m) => Some(m.cols()),
        }
    }

    /// One feature row per image, in input order.
    pub fn extract(&mut self, images: &[&Image]) -> Result<FeatureMatrix> {
        match self {
            Self::PixelPca { model: None, .. } => Err(invalid!("pixel PCA extractor has not been fitted")),
            Self::PixelPca { model: Some(m), .. } => {
                let rows = images.iter().map(|im| m.project(im)).collect::<Result<Vec<_>>>()?;
                FeatureMatrix::from_rows(&rows, m.components.len())
            }
            Self::ClassifierPenultimate(net) => {
                let rows: Vec<Vec<f64>> = net
                    .features(images)?
                    .into_iter()
                    .map(|r| r.into_iter().map(f64::from).collect())
                    .collect();
                let width = net.hidden.weight.value.shape()[1];
                FeatureMatrix::from_rows(&rows, width)
            }
            Self::External(m) => {
                if m.rows() != images.len() {
                    return Err(shape_err!(
                        "feature file has {} rows for {} images",
                        m.rows(),
                        images.len()
                    ));
                }
                Ok(m.clone())
            }
        }
    }
}

/// Reads CSV feature rows with header `dim_0..dim_{d-1}`.
pub fn read_feature_csv(path: &Path) -> Result<FeatureMatrix> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    for (i, h) in headers.iter().enumerate() {
        if h.trim() != format!("dim_{i}") {
            return Err(invalid!("{}: column {i} is `{h}`, expected `dim_{i}`", path.display()));
        }
    }
    let d = headers.len();
    let mut data = Vec::new();
    let mut n = 0;
    for rec in rdr.records() {
        let rec = rec?;
        for field in rec.iter() {
            data.push(
                field
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| invalid!("{}: bad number `{field}`", path.display()))?,
            );
        }
        n += 1;
    }
    FeatureMatrix::new(n, d, data)
}

pub fn write_feature_csv(path: &Path, m: &FeatureMatrix) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record((0..m.cols()).map(|i| format!("dim_{i}")))?;
    for r in 0..m.rows() {
        w.write_record(m.row(r).iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{build_classifier, ClfConfig};

    fn imgs() -> Vec<Image> {
        vec![
            Image::new(1, 3, 1, vec![0.0, 0.0, 1.0]).unwrap(),
            Image::new(1, 3, 1, vec![1.0, 0.0, 0.0]).unwrap(),
            Image::new(1, 3, 1, vec![0.0, 1.0, 0.5]).unwrap(),
        ]
    }

    #[test]
    fn pca_shapes_and_determinism() {
        let data = imgs();
        let refs: Vec<&Image> = data.iter().collect();
        let mut fx = FeatureExtractor::pixel_pca(2);
        assert!(fx.extract(&refs).is_err());
        fx.fit(&refs).unwrap();
        let m = fx.extract(&refs).unwrap();
        assert_eq!((m.rows(), m.cols()), (3, 2));
        let twice = fx.extract(&[refs[1], refs[1]]).unwrap();
        assert_eq!(twice.row(0), twice.row(1));
        assert_eq!(twice.row(0), m.row(1));
    }

    #[test]
    fn gram_path_matches_covariance_path() {
        let mut rng = crate::rng::RngStream::new(8);
        let data: Vec<Image> = (0..6)
            .map(|_| Image::new(2, 2, 1, (0..4).map(|_| rng.uniform()).collect()).unwrap())
            .collect();
        let refs: Vec<&Image> = data.iter().collect();
        let cov = PcaModel::fit(&refs, 2).unwrap();
        let gram = PcaModel::fit(&refs[..3], 2).unwrap();
        assert_eq!(cov.components.len(), 2);
        assert_eq!(gram.components.len(), 2);
        let norm: f64 = gram.components[0].iter().map(|v| v * v).sum();
        assert!((norm - 1.0).abs() < 1e-9);
        // Leading axis of 3 points via Gram equals the covariance eigenvector.
        let cov3 = {
            let big: Vec<Image> = refs[..3].iter().map(|&i| i.clone()).collect();
            let mut r: Vec<&Image> = big.iter().collect();
            r.extend(big.iter());
            PcaModel::fit(&r, 1).unwrap()
        };
        for (a, b) in cov3.components[0].iter().zip(&gram.components[0]) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn classifier_features_are_64_wide() {
        let cfg = ClfConfig { image_size: 16, channels: 1, ..ClfConfig::default() };
        let net = build_classifier(&cfg, 0).unwrap();
        let mut fx = FeatureExtractor::ClassifierPenultimate(Box::new(net));
        let img = Image::filled(16, 16, 1, 0.3);
        let m = fx.extract(&[&img, &img]).unwrap();
        assert_eq!(m.cols(), 64);
        assert_eq!(fx.dim(), Some(64));
    }

    #[test]
    fn external_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        let m = FeatureMatrix::new(2, 3, vec![1.0, 2.0, 3.0, 4.5, 5.0, -6.0]).unwrap();
        write_feature_csv(&p, &m).unwrap();
        assert!(std::fs::read_to_string(&p).unwrap().starts_with("dim_0,dim_1,dim_2\n"));
        let mut fx = FeatureExtractor::external(&p).unwrap();
        let img = Image::filled(1, 1, 1, 0.0);
        assert_eq!(fx.extract(&[&img, &img]).unwrap(), m);
        assert!(fx.extract(&[&img]).is_err());
    }
}
