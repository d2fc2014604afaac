use std::path::{Path, PathBuf};

use super::{
    build_experiment, compare, prepare_gans, render_report, run_experiment, write_report, Assets, ComparisonReport,
    RenderedReport, RunResult,
};
use crate::config::Settings;
use crate::data::{make_synthetic, save_png, split, ImageDataset, SyntheticSpec};
use crate::error::Result;
use crate::eval::image_grid;
use crate::gan::sample;
use crate::rng::RngStream;

pub struct PipelineOutput {
    pub results: Vec<RunResult>,
    pub comparison: Option<ComparisonReport>,
    pub report: RenderedReport,
}

/// Synthetic corpus → train/test split → GANs → every configured task →
/// metric and relative-change reports in `out`. When `dataset` is given it replaces
/// the synthetic corpus.
pub fn run_pipeline(settings: &Settings, dataset: Option<ImageDataset>, out: &Path) -> Result<PipelineOutput> {
    let exp = &settings.experiment;
    let corpus = match dataset {
        Some(ds) => ds,
        None => make_synthetic(&SyntheticSpec::fixture(
            exp.synth_size,
            exp.synth_channels,
            exp.synth_counts()?,
            exp.seed,
        )),
    };
    let (train, test) = split(&corpus, exp.train_counts()?, exp.seed)?;
    let mut assets = Assets::new(train, test);
    prepare_gans(&mut assets, &exp.tasks, &settings.gan, exp)?;

    let mut artifacts = Vec::new();
    std::fs::create_dir_all(out.join("grids"))?;
    for asset in &mut assets.gans {
        let mut rng = RngStream::new(exp.seed).substream("preview").substream(&asset.name);
        let images = sample(&mut asset.checkpoint.generator, 16, &mut rng)?;
        let refs: Vec<_> = images.iter().collect();
        let rel = PathBuf::from("grids").join(format!("{}.png", asset.name));
        save_png(&out.join(&rel), &image_grid(&refs, 8)?)?;
        artifacts.push(rel.display().to_string());
    }

    let mut results = Vec::new();
    for &task in &exp.tasks {
        let spec = build_experiment(task, &mut assets, exp)?;
        results.push(run_experiment(&spec, &settings.clf, Some(out))?);
    }
    let comparison = match results.iter().position(|r| r.task_id == 1) {
        Some(b) => {
            let others: Vec<RunResult> = results.iter().filter(|r| r.task_id != 1).cloned().collect();
            Some(compare(&results[b], &others)?)
        }
        None => None,
    };
    let report = render_report(&results, comparison.as_ref(), &artifacts)?;
    write_report(out, &report)?;
    Ok(PipelineOutput { results, comparison, report })
}
