//! The six classification tasks, repeated runs, relative-change reports,
//! the GAN hyperparameter sweep and the end-to-end pipeline.

mod pipeline;
mod report;
mod sweep;

pub use pipeline::{run_pipeline, PipelineOutput};
pub use report::{compare, render_report, round_half_up, write_report, ComparisonReport, ComparisonRow, RenderedReport};
pub use sweep::{sweep, SweepCell, SweepReport, SweepSpec};

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifier::{evaluate, train_classifier, ClfConfig, MetricsReport};
use crate::data::{balance_class, AugmentKind, AugmentRanges, DefectClass, ImageDataset, LabeledImage, Partition, Provenance};
use crate::error::{invalid, Error, Result};
use crate::gan::{prepare_real, sample, train_gan_with, Checkpoint, GanConfig, NoObserver};
use crate::rng::{derive_seed, RngStream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub repeats: usize,
    /// Per-class train size after augmentation or replacement.
    pub augment_target: usize,
    /// Train partition size per class id; the rest is test.
    pub train_counts: Vec<usize>,
    /// GAN images per failure class mixed in before classical augmentation
    /// (task 6).
    pub task6_gan_count: usize,
    pub tasks: Vec<usize>,
    /// Synthetic corpus used by the pipeline when no dataset is given.
    pub synth_size: usize,
    pub synth_channels: usize,
    pub synth_counts: Vec<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            repeats: 10,
            augment_target: 700,
            train_counts: vec![100, 700, 128],
            task6_gan_count: 100,
            tasks: vec![1, 2, 3, 4, 5, 6],
            synth_size: 96,
            synth_channels: 3,
            synth_counts: vec![132, 922, 169],
        }
    }
}

impl ExperimentConfig {
    pub fn train_counts(&self) -> Result<[usize; 3]> {
        three(&self.train_counts, "train_counts")
    }

    pub fn synth_counts(&self) -> Result<[usize; 3]> {
        three(&self.synth_counts, "synth_counts")
    }
}

fn three(v: &[usize], name: &str) -> Result<[usize; 3]> {
    v.try_into()
        .map_err(|_| invalid!("{name} needs exactly 3 entries, got {}", v.len()))
}

/// Which corpus a GAN was trained on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GanCorpus {
    /// Original train images of one class (tasks 2, 3, 6).
    Original,
    /// The class after classical balancing to the target (task 5).
    Classical,
}

impl GanCorpus {
    pub fn name(self) -> &'static str {
        match self {
            GanCorpus::Original => "original",
            GanCorpus::Classical => "classical",
        }
    }
}

/// A trained generator plus the original source ids it has seen.
#[derive(Clone, Debug)]
pub struct GanAsset {
    pub name: String,
    pub class: DefectClass,
    pub corpus: GanCorpus,
    pub checkpoint: Checkpoint,
    pub trained_on: Vec<String>,
}

/// Inputs shared by all tasks: the train/test partitions and any trained GANs.
#[derive(Clone, Debug, Default)]
pub struct Assets {
    pub train: ImageDataset,
    pub test: ImageDataset,
    pub gans: Vec<GanAsset>,
}

impl Assets {
    pub fn new(train: ImageDataset, test: ImageDataset) -> Self {
        Self { train, test, gans: Vec::new() }
    }

    pub fn gan_mut(&mut self, class: DefectClass, corpus: GanCorpus) -> Result<&mut GanAsset> {
        self.gans
            .iter_mut()
            .find(|g| g.class == class && g.corpus == corpus)
            .ok_or_else(|| Error::MissingAsset(format!("{} GAN for {class}", corpus.name())))
    }
}

/// Root original id behind an item (the source of an augmented copy).
pub fn origin_id(item: &LabeledImage) -> &str {
    match &item.provenance {
        Provenance::Augmented { source_id, .. } => source_id,
        _ => &item.source_id,
    }
}

/// Classical balancing of one class to `target`.
pub fn classical_fill(items: &[LabeledImage], target: usize, rng: &mut RngStream) -> Result<Vec<LabeledImage>> {
    balance_class(items, target, &AugmentKind::ALL, &AugmentRanges::default(), rng)
}

/// Trains one GAN on `items` for `loops` loops.
pub fn train_gan_asset(
    class: DefectClass,
    corpus: GanCorpus,
    items: &[LabeledImage],
    cfg: &GanConfig,
    loops: usize,
) -> Result<GanAsset> {
    let images: Vec<_> = items.iter().map(|it| &it.image).collect();
    let real = prepare_real(&images, cfg)?;
    let mut checkpoint = Checkpoint::new(cfg)?;
    train_gan_with(&mut checkpoint, &real, loops, &mut NoObserver, None)?;
    let mut trained_on: Vec<String> = items.iter().map(|it| origin_id(it).to_string()).collect();
    trained_on.sort();
    trained_on.dedup();
    Ok(GanAsset {
        name: format!("{}-{}", corpus.name(), class.name()),
        class,
        corpus,
        checkpoint,
        trained_on,
    })
}

/// Trains every GAN the requested tasks need: one per failure class on the
/// originals (tasks 2, 3, 6) and one per failure class on the classically
/// balanced set (task 5).
pub fn prepare_gans(assets: &mut Assets, tasks: &[usize], gan_cfg: &GanConfig, exp: &ExperimentConfig) -> Result<()> {
    let need_original = tasks.iter().any(|t| [2, 3, 6].contains(t));
    let need_classical = tasks.contains(&5);
    for (ci, class) in DefectClass::FAILURES.into_iter().enumerate() {
        let originals: Vec<LabeledImage> = assets.train.of_class(class).cloned().collect();
        let cfg = GanConfig {
            seed: derive_seed(exp.seed, 100 + ci as u64),
            ..gan_cfg.clone()
        };
        if need_original {
            assets
                .gans
                .push(train_gan_asset(class, GanCorpus::Original, &originals, &cfg, cfg.training_loops)?);
        }
        if need_classical {
            let mut rng = RngStream::new(exp.seed).substream("gan-corpus").substream(class.name());
            let balanced = classical_fill(&originals, exp.augment_target.max(originals.len()), &mut rng)?;
            let cfg = GanConfig { seed: derive_seed(cfg.seed, 1), ..cfg };
            assets
                .gans
                .push(train_gan_asset(class, GanCorpus::Classical, &balanced, &cfg, cfg.training_loops)?);
        }
    }
    Ok(())
}

/// Materialized train/test sets of one task.
#[derive(Clone, Debug)]
pub struct ExperimentSpec {
    pub task_id: usize,
    pub train: ImageDataset,
    pub test: ImageDataset,
    /// Original ids seen by any GAN whose samples are in `train`.
    pub gan_inputs: Vec<String>,
    pub repeats: usize,
    pub seed: u64,
}

fn generated(asset: &mut GanAsset, n: usize, rng: &mut RngStream) -> Result<Vec<LabeledImage>> {
    let images = sample(&mut asset.checkpoint.generator, n, rng)?;
    Ok(images
        .into_iter()
        .enumerate()
        .map(|(k, image)| LabeledImage {
            image,
            label: asset.class,
            source_id: format!("gan:{}:{k}", asset.name),
            partition: Partition::Train,
            provenance: Provenance::Generated { generator: asset.name.clone() },
        })
        .collect())
}

pub fn build_experiment(task_id: usize, assets: &mut Assets, cfg: &ExperimentConfig) -> Result<ExperimentSpec> {
    if !(1..=6).contains(&task_id) {
        return Err(invalid!("task id must be 1..6, got {task_id}"));
    }
    if assets.train.is_empty() || assets.test.is_empty() {
        return Err(Error::MissingAsset("train and test partitions".into()));
    }
    let target = cfg.augment_target;
    let root = RngStream::new(cfg.seed).substream(&format!("task{task_id}"));
    let mut items: Vec<LabeledImage> = assets.train.of_class(DefectClass::Intact).cloned().collect();
    let mut gan_inputs = BTreeSet::new();
    for class in DefectClass::FAILURES {
        let originals: Vec<LabeledImage> = assets.train.of_class(class).cloned().collect();
        let mut rng = root.substream(class.name());
        let fill = target.saturating_sub(originals.len());
        let class_items = match task_id {
            1 => originals,
            2 | 5 => {
                let corpus = if task_id == 2 { GanCorpus::Original } else { GanCorpus::Classical };
                let asset = assets.gan_mut(class, corpus)?;
                gan_inputs.extend(asset.trained_on.iter().cloned());
                let mut v = originals;
                v.extend(generated(asset, fill, &mut rng)?);
                v
            }
            3 => {
                let asset = assets.gan_mut(class, GanCorpus::Original)?;
                gan_inputs.extend(asset.trained_on.iter().cloned());
                generated(asset, target, &mut rng)?
            }
            4 => classical_fill(&originals, target.max(originals.len()), &mut rng)?,
            _ => {
                let asset = assets.gan_mut(class, GanCorpus::Original)?;
                gan_inputs.extend(asset.trained_on.iter().cloned());
                let mut pool = originals;
                let extra = cfg.task6_gan_count.min(target.saturating_sub(pool.len()));
                pool.extend(generated(asset, extra, &mut rng.substream("gan"))?);
                classical_fill(&pool, target.max(pool.len()), &mut rng)?
            }
        };
        items.extend(class_items);
    }
    items.sort_by_key(|it| it.label);
    Ok(ExperimentSpec {
        task_id,
        train: ImageDataset::new(items),
        test: assets.test.clone(),
        gan_inputs: gan_inputs.into_iter().collect(),
        repeats: cfg.repeats,
        seed: cfg.seed,
    })
}

/// Fails if any test source id appears in the train set, behind an
/// augmented copy, or among the GAN training inputs.
pub fn check_leakage(spec: &ExperimentSpec) -> Result<()> {
    let test: BTreeSet<&str> = spec.test.items.iter().map(|it| it.source_id.as_str()).collect();
    for it in &spec.train.items {
        for id in [it.source_id.as_str(), origin_id(it)] {
            if test.contains(id) {
                return Err(Error::Leakage(format!("task {}: train item {id}", spec.task_id)));
            }
        }
    }
    if let Some(id) = spec.gan_inputs.iter().find(|id| test.contains(id.as_str())) {
        return Err(Error::Leakage(format!("task {}: GAN input {id}", spec.task_id)));
    }
    Ok(())
}

/// Per-repeat reports and their cellwise mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub task_id: usize,
    pub seeds: Vec<u64>,
    pub reports: Vec<MetricsReport>,
    pub mean: MetricsReport,
}

impl RunResult {
    /// Wraps an already aggregated report (e.g. a reference table row).
    pub fn from_report(task_id: usize, report: MetricsReport) -> Self {
        Self { task_id, seeds: Vec::new(), reports: vec![report.clone()], mean: report }
    }
}

/// Seed of repeat `r` of task `t`: `derive_seed(master, t·2³² + r)`.
pub fn repeat_seed(master: u64, task_id: usize, repeat: usize) -> u64 {
    derive_seed(master, ((task_id as u64) << 32) | repeat as u64)
}

/// Trains and evaluates the classifier `spec.repeats` times. Each repeat's
/// report is written to `out/task<N>/repeat_<r>.json` when `out` is given.
pub fn run_experiment(spec: &ExperimentSpec, clf: &ClfConfig, out: Option<&Path>) -> Result<RunResult> {
    if spec.repeats == 0 {
        return Err(invalid!("repeats must be >= 1"));
    }
    check_leakage(spec)?;
    let mut seeds = Vec::with_capacity(spec.repeats);
    let mut reports = Vec::with_capacity(spec.repeats);
    for r in 0..spec.repeats {
        let seed = repeat_seed(spec.seed, spec.task_id, r);
        let cfg = ClfConfig { seed, ..clf.clone() };
        let (mut net, _) = train_classifier(&spec.train, &cfg)?;
        let report = evaluate(&mut net, &spec.test)?;
        if let Some(dir) = out {
            let dir = dir.join(format!("task{}", spec.task_id));
            std::fs::create_dir_all(&dir)?;
            std::fs::write(dir.join(format!("repeat_{r:02}.json")), serde_json::to_string_pretty(&report)?)?;
        }
        log::info!("task {} repeat {r}: accuracy {:.4}", spec.task_id, report.accuracy);
        seeds.push(seed);
        reports.push(report);
    }
    let mean = MetricsReport::mean(&reports)?;
    Ok(RunResult { task_id: spec.task_id, seeds, reports, mean })
}
