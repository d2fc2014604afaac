use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Image;
use crate::error::{invalid, Result};
use crate::eval::{fid_between, FeatureExtractor};
use crate::gan::{prepare_real, sample, train_gan_with, Checkpoint, GanConfig, LossRecord, TrainObserver};
use crate::rng::{derive_seed, RngStream};

/// Grid of GAN settings trained at a reduced loop count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSpec {
    pub batch_sizes: Vec<usize>,
    pub latent_sizes: Vec<usize>,
    /// `k_d:k_g` pairs, e.g. `4:3`.
    pub steps: Vec<String>,
    /// Real-label values; 1 means no smoothing, `r < 1` uses `r / 1 − r`.
    pub smoothing: Vec<f32>,
    pub loops: usize,
    pub fid_every: usize,
    /// Pixel PCA width for the distance.
    pub fid_dim: usize,
    pub seed: u64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            batch_sizes: vec![50],
            latent_sizes: vec![100],
            steps: vec!["4:3".into(), "1:1".into()],
            smoothing: vec![1.0, 0.85],
            loops: 1000,
            fid_every: 100,
            fid_dim: 16,
            seed: 0,
        }
    }
}

fn parse_steps(s: &str) -> Result<(usize, usize)> {
    let (d, g) = s
        .split_once(':')
        .ok_or_else(|| invalid!("step pair `{s}` must look like 4:3"))?;
    let parse = |v: &str| {
        v.trim()
            .parse::<usize>()
            .map_err(|_| invalid!("bad step count in `{s}`"))
    };
    Ok((parse(d)?, parse(g)?))
}

/// Legend label: `50/100 d4g3`, plus ` /85` with smoothing.
pub fn cell_name(batch: usize, latent: usize, k_d: usize, k_g: usize, real_label: f32) -> String {
    let mut name = format!("{batch}/{latent} d{k_d}g{k_g}");
    if real_label < 1.0 {
        write!(name, " /{}", (real_label * 100.0).round() as u32).unwrap();
    }
    name
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub name: String,
    pub config: GanConfig,
    /// `(loop, distance)`, starting at loop 0.
    pub fid_curve: Vec<(u64, f64)>,
    pub losses: Vec<(u64, f64, f64)>,
}

impl SweepCell {
    pub fn final_fid(&self) -> f64 {
        self.fid_curve.last().map_or(f64::INFINITY, |p| p.1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub cells: Vec<SweepCell>,
    /// Cell indices by ascending final distance.
    pub ranking: Vec<usize>,
}

struct FidTracker<'a> {
    every: u64,
    real: &'a [&'a Image],
    extractor: &'a mut FeatureExtractor,
    seed: u64,
    curve: Vec<(u64, f64)>,
}

impl FidTracker<'_> {
    fn measure(&mut self, state: &mut Checkpoint) -> Result<()> {
        let mut rng = RngStream::new(self.seed).fork(state.loop_index);
        let images = sample(&mut state.generator, self.real.len(), &mut rng)?;
        let refs: Vec<&Image> = images.iter().collect();
        let fd = fid_between(self.extractor, self.real, &refs)?;
        self.curve.push((state.loop_index, fd));
        Ok(())
    }
}

impl TrainObserver for FidTracker<'_> {
    fn after_loop(&mut self, state: &mut Checkpoint) -> Result<()> {
        if self.every > 0 && state.loop_index.is_multiple_of(self.every) {
            self.measure(state)?;
        }
        Ok(())
    }
}

/// Trains one GAN per grid cell on `real` and ranks cells by final
/// pixel-PCA Fréchet distance. The grid is taken in the order batch,
/// latent, steps, smoothing.
pub fn sweep(spec: &SweepSpec, base: &GanConfig, real: &[&Image]) -> Result<SweepReport> {
    let steps: Vec<(usize, usize)> = spec.steps.iter().map(|s| parse_steps(s)).collect::<Result<_>>()?;
    if spec.batch_sizes.is_empty() || spec.latent_sizes.is_empty() || steps.is_empty() || spec.smoothing.is_empty() {
        return Err(invalid!("sweep grid is empty"));
    }
    let mut extractor = FeatureExtractor::pixel_pca(spec.fid_dim);
    extractor.fit(real)?;
    let mut cells = Vec::new();
    for &batch in &spec.batch_sizes {
        for &latent in &spec.latent_sizes {
            for &(k_d, k_g) in &steps {
                for &smooth in &spec.smoothing {
                    let idx = cells.len() as u64;
                    let (real_label, fake_label) = if smooth < 1.0 { (smooth, 1.0 - smooth) } else { (1.0, 0.0) };
                    let cfg = GanConfig {
                        batch_size: batch,
                        latent_size: latent,
                        k_d,
                        k_g,
                        real_label,
                        fake_label,
                        training_loops: spec.loops,
                        seed: derive_seed(spec.seed, idx),
                        ..base.clone()
                    };
                    let name = cell_name(batch, latent, k_d, k_g, real_label);
                    log::info!("sweep cell {name}");
                    let tensor = prepare_real(real, &cfg)?;
                    let mut state = Checkpoint::new(&cfg)?;
                    let mut tracker = FidTracker {
                        every: spec.fid_every as u64,
                        real,
                        extractor: &mut extractor,
                        seed: derive_seed(spec.seed, 1 << 40),
                        curve: Vec::new(),
                    };
                    tracker.measure(&mut state)?;
                    train_gan_with(&mut state, &tensor, spec.loops, &mut tracker, None)?;
                    if tracker.curve.last().map(|p| p.0) != Some(state.loop_index) {
                        tracker.measure(&mut state)?;
                    }
                    cells.push(SweepCell {
                        name,
                        config: cfg,
                        fid_curve: tracker.curve,
                        losses: state
                            .history
                            .iter()
                            .map(|r: &LossRecord| (r.loop_index, r.d_loss, r.g_loss))
                            .collect(),
                    });
                }
            }
        }
    }
    let mut ranking: Vec<usize> = (0..cells.len()).collect();
    ranking.sort_by(|&a, &b| cells[a].final_fid().total_cmp(&cells[b].final_fid()).then(a.cmp(&b)));
    Ok(SweepReport { cells, ranking })
}

impl SweepReport {
    /// `ranking.csv` (rank,cell,final_fid), `curves.csv` (cell,loop,fid) and
    /// `losses.csv` (cell,loop,d_loss,g_loss).
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("ranking.csv"))?;
        w.write_record(["rank", "cell", "final_fid"])?;
        for (rank, &i) in self.ranking.iter().enumerate() {
            w.write_record([(rank + 1).to_string(), self.cells[i].name.clone(), self.cells[i].final_fid().to_string()])?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join("curves.csv"))?;
        w.write_record(["cell", "loop", "fid"])?;
        for c in &self.cells {
            for (l, f) in &c.fid_curve {
                w.write_record([c.name.clone(), l.to_string(), f.to_string()])?;
            }
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join("losses.csv"))?;
        w.write_record(["cell", "loop", "d_loss", "g_loss"])?;
        for c in &self.cells {
            for (l, d, g) in &c.losses {
                w.write_record([c.name.clone(), l.to_string(), d.to_string(), g.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_follow_legend() {
        assert_eq!(cell_name(50, 100, 4, 3, 1.0), "50/100 d4g3");
        assert_eq!(cell_name(50, 100, 4, 3, 0.85), "50/100 d4g3 /85");
        assert!(parse_steps("43").is_err());
        assert_eq!(parse_steps("4:3").unwrap(), (4, 3));
    }

    #[test]
    fn two_cells_two_curves_reproducible() {
        let real: Vec<Image> = (0..6).map(|i| Image::filled(8, 8, 1, i as f32 / 6.0)).collect();
        let refs: Vec<&Image> = real.iter().collect();
        let base = GanConfig {
            image_size: 8,
            gen_channels: vec![2, 2],
            disc_channels: vec![2, 2],
            ..GanConfig::toy()
        };
        let spec = SweepSpec {
            batch_sizes: vec![4],
            latent_sizes: vec![4],
            steps: vec!["4:3".into(), "1:1".into()],
            smoothing: vec![1.0],
            loops: 2,
            fid_every: 1,
            fid_dim: 2,
            seed: 3,
        };
        let a = sweep(&spec, &base, &refs).unwrap();
        assert_eq!(a.cells.len(), 2);
        assert!(a.cells.iter().all(|c| c.fid_curve.len() == 3));
        assert_eq!(a.cells[1].name, "4/4 d1g1");
        let b = sweep(&spec, &base, &refs).unwrap();
        assert_eq!(a.ranking, b.ranking);
        let dir = tempfile::tempdir().unwrap();
        a.write(dir.path()).unwrap();
        assert!(dir.path().join("curves.csv").exists());
    }
}
