//! Exact t-SNE in f64.

use std::path::Path;

use super::FeatureMatrix;
use crate::error::{invalid, Error, Result};
use crate::rng::RngStream;

#[derive(Clone, Debug, PartialEq)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch: usize,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch: 250,
            exaggeration: 12.0,
            exaggeration_iters: 250,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TsneResult {
    pub points: Vec<[f64; 2]>,
    /// KL(P‖Q) with the unexaggerated P after every iteration.
    pub kl_history: Vec<f64>,
    /// Achieved entropy (nats) of each conditional distribution.
    pub entropies: Vec<f64>,
    /// Perplexity actually used after capping.
    pub perplexity: f64,
}

/// Perplexity used for `n` points: the request, capped at
/// `max((n − 1)/3, 2)`. Requests above `n − 1` are infeasible.
pub fn effective_perplexity(requested: f64, n: usize) -> Result<f64> {
    if n < 3 {
        return Err(Error::Insufficient(format!("t-SNE needs at least 3 points, got {n}")));
    }
    if requested.is_nan() || requested < 2.0 {
        return Err(invalid!("perplexity must be >= 2, got {requested}"));
    }
    if requested > (n - 1) as f64 {
        return Err(invalid!("perplexity {requested} is infeasible for {n} points"));
    }
    let cap = ((n - 1) as f64 / 3.0).max(2.0);
    Ok(requested.min(cap))
}

fn squared_distances(x: &FeatureMatrix) -> Vec<f64> {
    let n = x.rows();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

/// Conditional distribution of row `i` at precision `beta`, returning its
/// entropy in nats.
fn conditional(dist: &[f64], i: usize, beta: f64, out: &mut [f64]) -> f64 {
    let n = out.len();
    let dmin = (0..n).filter(|&j| j != i).map(|j| dist[j]).fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    for j in 0..n {
        out[j] = if j == i { 0.0 } else { (-beta * (dist[j] - dmin)).exp() };
        sum += out[j];
    }
    let mut h = 0.0;
    for p in out.iter_mut() {
        *p /= sum;
        if *p > 0.0 {
            h -= *p * p.ln();
        }
    }
    h
}

/// Binary search over the precision so each row's entropy equals
/// `ln(perplexity)`. Returns the row-stochastic matrix and the entropies.
pub fn calibrate(x: &FeatureMatrix, perplexity: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = x.rows();
    let dist = squared_distances(x);
    let target = perplexity.ln();
    let mut p = vec![0.0; n * n];
    let mut entropies = Vec::with_capacity(n);
    for i in 0..n {
        let row = &dist[i * n..(i + 1) * n];
        let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
        let scale = {
            let m: f64 = row.iter().sum::<f64>() / (n - 1) as f64;
            if m > 0.0 {
                1.0 / m
            } else {
                1.0
            }
        };
        let mut beta = scale;
        let mut h = conditional(row, i, beta, &mut p[i * n..(i + 1) * n]);
        for _ in 0..200 {
            if (h - target).abs() < 1e-7 {
                break;
            }
            if h > target {
                lo = beta;
                beta = if hi.is_finite() { 0.5 * (beta + hi) } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = 0.5 * (beta + lo);
            }
            h = conditional(row, i, beta, &mut p[i * n..(i + 1) * n]);
        }
        entropies.push(h);
    }
    Ok((p, entropies))
}

fn kl_divergence(p: &[f64], q_num: &[f64], q_sum: f64) -> f64 {
    p.iter()
        .zip(q_num)
        .filter(|(&pij, _)| pij > 0.0)
        .map(|(&pij, &qn)| pij * (pij / (qn / q_sum).max(1e-300)).ln())
        .sum()
}

pub fn tsne(x: &FeatureMatrix, cfg: &TsneConfig) -> Result<TsneResult> {
    let n = x.rows();
    let perplexity = effective_perplexity(cfg.perplexity, n)?;
    if cfg.iterations == 0 {
        return Err(invalid!("t-SNE needs at least one iteration"));
    }
    let (cond, entropies) = calibrate(x, perplexity)?;
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = ((cond[i * n + j] + cond[j * n + i]) / (2.0 * n as f64)).max(1e-12);
        }
        p[i * n + i] = 0.0;
    }
    let psum: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= psum);

    let mut rng = RngStream::new(cfg.seed).substream("tsne");
    let mut y: Vec<f64> = (0..2 * n).map(|_| 1e-4 * rng.normal_f64()).collect();
    let mut update = vec![0.0; 2 * n];
    let mut gains = vec![1.0f64; 2 * n];
    let mut num = vec![0.0; n * n];
    let mut grad = vec![0.0; 2 * n];
    let mut kl_history = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let exag = if it < cfg.exaggeration_iters { cfg.exaggeration } else { 1.0 };
        let momentum = if it < cfg.momentum_switch { cfg.momentum } else { cfg.final_momentum };
        let mut qsum = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let dx = y[2 * i] - y[2 * j];
                let dy = y[2 * i + 1] - y[2 * j + 1];
                let v = 1.0 / (1.0 + dx * dx + dy * dy);
                num[i * n + j] = v;
                num[j * n + i] = v;
                qsum += 2.0 * v;
            }
        }
        grad.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = num[i * n + j];
                let coeff = 4.0 * (exag * p[i * n + j] - w / qsum) * w;
                grad[2 * i] += coeff * (y[2 * i] - y[2 * j]);
                grad[2 * i + 1] += coeff * (y[2 * i + 1] - y[2 * j + 1]);
            }
        }
        for k in 0..2 * n {
            gains[k] = if (grad[k] > 0.0) != (update[k] > 0.0) {
                gains[k] + 0.2
            } else {
                (gains[k] * 0.8).max(0.01)
            };
            update[k] = momentum * update[k] - cfg.learning_rate * gains[k] * grad[k];
            y[k] += update[k];
        }
        for d in 0..2 {
            let mean = (0..n).map(|i| y[2 * i + d]).sum::<f64>() / n as f64;
            (0..n).for_each(|i| y[2 * i + d] -= mean);
        }
        // KL of the updated layout.
        let mut qs = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let dx = y[2 * i] - y[2 * j];
                let dy = y[2 * i + 1] - y[2 * j + 1];
                let v = 1.0 / (1.0 + dx * dx + dy * dy);
                num[i * n + j] = v;
                num[j * n + i] = v;
                qs += 2.0 * v;
            }
        }
        kl_history.push(kl_divergence(&p, &num, qs));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "t-SNE".into() });
    }
    Ok(TsneResult {
        points: y.chunks(2).map(|c| [c[0], c[1]]).collect(),
        kl_history,
        entropies,
        perplexity,
    })
}

/// 2-D points with per-point group (real/generated) and class tags.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding2D {
    pub points: Vec<[f64; 2]>,
    pub groups: Vec<String>,
    pub classes: Vec<String>,
}

impl Embedding2D {
    /// CSV `x,y,group,class`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["x", "y", "group", "class"])?;
        for ((p, g), c) in self.points.iter().zip(&self.groups).zip(&self.classes) {
            w.write_record([p[0].to_string(), p[1].to_string(), g.clone(), c.clone()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Mean silhouette coefficient of a labeled 2-D point set.
pub fn silhouette(points: &[[f64; 2]], labels: &[usize]) -> f64 {
    let n = points.len();
    let dist = |a: &[f64; 2], b: &[f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    let mut groups: Vec<usize> = labels.to_vec();
    groups.sort_unstable();
    groups.dedup();
    let mut total = 0.0;
    for i in 0..n {
        let mean_to = |g: usize| {
            let (s, c) = (0..n)
                .filter(|&j| j != i && labels[j] == g)
                .fold((0.0, 0usize), |(s, c), j| (s + dist(&points[i], &points[j]), c + 1));
            if c == 0 {
                None
            } else {
                Some(s / c as f64)
            }
        };
        let Some(a) = mean_to(labels[i]) else { continue };
        let b = groups
            .iter()
            .filter(|&&g| g != labels[i])
            .filter_map(|&g| mean_to(g))
            .fold(f64::INFINITY, f64::min);
        if b.is_finite() {
            total += (b - a) / a.max(b).max(1e-300);
        }
    }
    total / n as f64
}

/// Area of the convex hull of 2-D points (monotone chain + shoelace).
pub fn convex_hull_area(points: &[[f64; 2]]) -> f64 {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return 0.0;
    }
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    let mut hull: Vec<[f64; 2]> = Vec::new();
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    let m = hull.len();
    (0..m)
        .map(|i| {
            let (a, b) = (hull[i], hull[(i + 1) % m]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum::<f64>()
        .abs()
        * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clusters(seed: u64) -> FeatureMatrix {
        let mut rng = RngStream::new(seed);
        let mut data = Vec::new();
        for c in 0..2 {
            for _ in 0..30 {
                for d in 0..5 {
                    let centre = if c == 1 && d == 0 { 100.0 } else { 0.0 };
                    data.push(centre + rng.normal_f64());
                }
            }
        }
        FeatureMatrix::new(60, 5, data).unwrap()
    }

    #[test]
    fn uniform_distances_hit_entropy() {
        let x = FeatureMatrix::new(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let (_, h) = calibrate(&x, 2.0).unwrap();
        assert!(h.iter().all(|v| (v - 2f64.ln()).abs() < 1e-4));
        assert!(effective_perplexity(3.0, 3).is_err());
        assert_eq!(effective_perplexity(30.0, 61).unwrap(), 20.0);
    }

    #[test]
    fn separates_clusters_deterministically() {
        let x = clusters(1);
        let cfg = TsneConfig { iterations: 400, ..TsneConfig::default() };
        let a = tsne(&x, &cfg).unwrap();
        let b = tsne(&x, &cfg).unwrap();
        assert_eq!(a, b);
        let labels: Vec<usize> = (0..60).map(|i| i / 30).collect();
        assert!(silhouette(&a.points, &labels) > 0.0);
        let target = a.perplexity.ln();
        assert!(a.entropies.iter().all(|h| (h - target).abs() < 1e-4));
        assert!(a.kl_history.iter().all(|&k| k >= 0.0));
    }

    #[test]
    fn hull_area_square() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.5, 0.5]];
        assert!((convex_hull_area(&pts) - 1.0).abs() < 1e-12);
        assert_eq!(convex_hull_area(&pts[..2]), 0.0);
    }
}
