use super::linalg::{matmul, sqrt_psd, symmetric_eigen};
use super::FeatureMatrix;
use crate::error::{shape_err, Error, Result};

/// Mean and unbiased covariance (row-major `d×d`) of feature rows.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianStats {
    pub mean: Vec<f64>,
    pub cov: Vec<f64>,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

pub fn gaussian_stats(features: &FeatureMatrix) -> Result<GaussianStats> {
    let (n, d) = (features.rows(), features.cols());
    if n < 2 {
        return Err(Error::Insufficient(format!("covariance needs at least 2 rows, got {n}")));
    }
    let mut mean = vec![0.0; d];
    for r in 0..n {
        for (m, x) in mean.iter_mut().zip(features.row(r)) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = vec![0.0; d * d];
    let mut centered = vec![0.0; d];
    for r in 0..n {
        for ((c, x), m) in centered.iter_mut().zip(features.row(r)).zip(&mean) {
            *c = x - m;
        }
        for i in 0..d {
            let ci = centered[i];
            if ci == 0.0 {
                continue;
            }
            for j in i..d {
                cov[i * d + j] += ci * centered[j];
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..d {
        for j in i..d {
            let v = cov[i * d + j] / denom;
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
    }
    Ok(GaussianStats { mean, cov })
}

/// `‖μa−μb‖² + Tr Σa + Tr Σb − 2·Tr((Σa^½ Σb Σa^½)^½)`, clipped at zero.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    let d = a.dim();
    if b.dim() != d || a.cov.len() != d * d || b.cov.len() != d * d {
        return Err(shape_err!("frechet: dimensions {} and {} differ", a.dim(), b.dim()));
    }
    let dmu: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y) * (x - y)).sum();
    let trace = |m: &[f64]| (0..d).map(|i| m[i * d + i]).sum::<f64>();
    let root_a = sqrt_psd(&a.cov, d)?;
    let inner = matmul(&matmul(&root_a, &b.cov, d), &root_a, d);
    let (vals, _) = symmetric_eigen(&inner, d)?;
    let tr_root: f64 = vals.iter().map(|&l| l.max(0.0).sqrt()).sum();
    Ok((dmu + trace(&a.cov) + trace(&b.cov) - 2.0 * tr_root).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use proptest::prelude::*;

    fn stats(mean: Vec<f64>, cov: Vec<f64>) -> GaussianStats {
        GaussianStats { mean, cov }
    }

    #[test]
    fn two_point_stats() {
        let f = FeatureMatrix::new(2, 2, vec![0.0, 0.0, 2.0, 2.0]).unwrap();
        let s = gaussian_stats(&f).unwrap();
        assert_eq!(s.mean, vec![1.0, 1.0]);
        assert_eq!(s.cov, vec![2.0, 2.0, 2.0, 2.0]);
        let same = FeatureMatrix::new(3, 2, vec![1.0, 5.0, 1.0, 5.0, 1.0, 5.0]).unwrap();
        assert!(gaussian_stats(&same).unwrap().cov.iter().all(|&v| v == 0.0));
        let one = FeatureMatrix::new(1, 2, vec![1.0, 5.0]).unwrap();
        assert!(gaussian_stats(&one).is_err());
    }

    #[test]
    fn identity_covariance_shift() {
        let a = stats(vec![0.0, 0.0], vec![1.0, 0.0, 0.0, 1.0]);
        let b = stats(vec![3.0, 4.0], vec![1.0, 0.0, 0.0, 1.0]);
        assert_eq!(frechet_distance(&a, &b).unwrap(), 25.0);
        assert!(frechet_distance(&a, &a).unwrap() < 1e-6);
        assert!(frechet_distance(&a, &stats(vec![0.0], vec![1.0])).is_err());
    }

    #[test]
    fn scalar_case() {
        let a = stats(vec![0.0], vec![1.0]);
        let b = stats(vec![0.0], vec![4.0]);
        assert!((frechet_distance(&a, &b).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn random_stats_symmetric_cov() {
        let mut rng = RngStream::new(3);
        let data: Vec<f64> = (0..50 * 6).map(|_| rng.normal_f64()).collect();
        let s = gaussian_stats(&FeatureMatrix::new(50, 6, data).unwrap()).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                assert!((s.cov[i * 6 + j] - s.cov[j * 6 + i]).abs() < 1e-6);
            }
        }
    }

    fn random_psd(d: usize, rng: &mut RngStream) -> Vec<f64> {
        let b: Vec<f64> = (0..d * d).map(|_| rng.normal_f64()).collect();
        let mut m = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                m[i * d + j] = (0..d).map(|k| b[i * d + k] * b[j * d + k]).sum::<f64>() / d as f64;
            }
        }
        m
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn symmetric_nonnegative_and_shared_cov(seed in any::<u64>(), d in 1usize..6) {
            let mut rng = RngStream::new(seed);
            let mu = |rng: &mut RngStream| (0..d).map(|_| rng.normal_f64() * 2.0).collect::<Vec<_>>();
            let a = stats(mu(&mut rng), random_psd(d, &mut rng));
            let b = stats(mu(&mut rng), random_psd(d, &mut rng));
            let ab = frechet_distance(&a, &b).unwrap();
            let ba = frechet_distance(&b, &a).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - ba).abs() < 1e-5 * (1.0 + ab));
            let shared = stats(b.mean.clone(), a.cov.clone());
            let dmu: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y).powi(2)).sum();
            prop_assert!((frechet_distance(&a, &shared).unwrap() - dmu).abs() < 1e-6 * (1.0 + dmu));
        }

        #[test]
        fn scalar_closed_form(ma in -10.0f64..10.0, mb in -10.0f64..10.0, sa in 0.01f64..5.0, sb in 0.01f64..5.0) {
            let fd = frechet_distance(&stats(vec![ma], vec![sa * sa]), &stats(vec![mb], vec![sb * sb])).unwrap();
            let oracle = (ma - mb).powi(2) + (sa - sb).powi(2);
            prop_assert!((fd - oracle).abs() < 1e-6);
        }
    }
}
