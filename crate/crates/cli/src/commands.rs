use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dfgan_core::classifier::{evaluate, train_classifier, MetricsReport};
use dfgan_core::data::{
    auto_crop, balance_classical, crop, load_dataset, load_png, make_synthetic, read_annotations, resize,
    review_manifest, save_dataset, save_png, split, DefectClass, Image, ImageDataset, LabeledImage, Partition,
    SyntheticSpec,
};
use dfgan_core::eval::{
    fid_repeated, frechet_distance, gaussian_stats, image_grid, read_feature_csv, silhouette, tsne, turing_sheet,
    Embedding2D, FeatureExtractor, TsneConfig,
};
use dfgan_core::experiment::{compare, render_report, run_pipeline, sweep, write_report, RunResult};
use dfgan_core::gan::{
    interpolate_latent, load_checkpoint, prepare_real, sample, train_gan_with, write_loss_history, Checkpoint,
    NoObserver,
};
use dfgan_core::{RngStream, Settings};

use crate::*;

pub fn run(common: &Common, command: Command) -> Result<()> {
    let mut settings = match &common.config {
        Some(path) => Settings::load(path)?,
        None => Settings::default(),
    };
    if let Some(seed) = common.seed {
        settings = settings.with_seed(seed);
    }
    let out = common.out.as_path();
    match command {
        Command::Ingest(a) => ingest(&settings, out, a),
        Command::Synth(a) => synth(&settings, out, a),
        Command::Augment(a) => augment(&settings, out, a),
        Command::GanTrain(a) => gan_train(&settings, out, a),
        Command::GanSample(a) => gan_sample(&settings, out, a),
        Command::GanInterpolate(a) => gan_interpolate(&settings, out, a),
        Command::Fid(a) => fid(&settings, out, a),
        Command::Tsne(a) => tsne_cmd(&settings, out, a),
        Command::TuringSheet(a) => sheet(&settings, out, a),
        Command::ClfTrain(a) => clf_train(&settings, out, a),
        Command::Experiment(ExperimentCommand::Run(a)) => experiment_run(settings, out, a),
        Command::Report(a) => report(out, a),
        Command::Sweep(a) => sweep_cmd(&settings, out, a),
        Command::Config => {
            print!("{}", settings.to_flat());
            Ok(())
        }
    }
}

fn open_dataset(dir: &Path) -> Result<ImageDataset> {
    load_dataset(dir, &dir.join("manifest.csv")).with_context(|| format!("loading dataset {}", dir.display()))
}

fn class_images(ds: &ImageDataset, class: Option<DefectClass>) -> Vec<&Image> {
    ds.items
        .iter()
        .filter(|it| class.is_none_or(|c| it.label == c))
        .map(|it| &it.image)
        .collect()
}

fn load_image_dir(dir: &Path) -> Result<Vec<Image>> {
    if dir.join("manifest.csv").exists() {
        return Ok(open_dataset(dir)?.items.into_iter().map(|it| it.image).collect());
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    Ok(paths.iter().map(|p| load_png(p)).collect::<dfgan_core::Result<_>>()?)
}

fn generated_images(src: &GeneratedSource, n: usize, rng: &mut RngStream) -> Result<Vec<Image>> {
    match (&src.generated, &src.checkpoint) {
        (Some(dir), _) => load_image_dir(dir),
        (None, Some(ckpt)) => {
            let mut state = load_checkpoint(ckpt)?;
            Ok(sample(&mut state.generator, n, rng)?)
        }
        (None, None) => bail!("give --generated or --checkpoint"),
    }
}

fn write_images(dir: &Path, prefix: &str, images: &[Image]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (i, img) in images.iter().enumerate() {
        save_png(&dir.join(format!("{prefix}_{i:04}.png")), img)?;
    }
    Ok(())
}

fn assign_split(ds: ImageDataset, settings: &Settings) -> Result<ImageDataset> {
    let exp = &settings.experiment;
    let (train, test) = split(&ds, exp.train_counts()?, exp.seed)?;
    let mut all = train;
    all.extend(test);
    Ok(all)
}

fn ingest(settings: &Settings, out: &Path, a: IngestArgs) -> Result<()> {
    let mut items: Vec<LabeledImage> = Vec::new();
    if let Some(ann_path) = &a.annotations {
        let sources = a.sources.as_deref().expect("clap requires --sources");
        let anns = read_annotations(ann_path)?;
        let mut by_source: BTreeMap<String, Vec<_>> = BTreeMap::new();
        for ann in anns {
            by_source.entry(ann.source_id.clone()).or_default().push(ann);
        }
        for (id, group) in by_source {
            let direct = sources.join(&id);
            let path = if direct.extension().is_some() { direct } else { sources.join(format!("{id}.png")) };
            let source = load_png(&path)?;
            let result = crop(&source, &group)?;
            for w in &result.warnings {
                log::warn!("{w}");
            }
            items.extend(result.crops);
        }
    } else if let Some(src) = &a.auto {
        let window = a.window.expect("clap requires --window");
        let stride = if a.stride == 0 { window } else { a.stride };
        let image = load_png(src)?;
        let id = src.file_stem().map_or_else(|| "source".into(), |s| s.to_string_lossy().into_owned());
        items = auto_crop(&image, &id, window, stride)?;
    } else if let Some(manifest) = &a.manifest {
        let images = a.images.as_deref().expect("clap requires --images");
        items = load_dataset(images, manifest)?.items;
    } else {
        bail!("give --annotations, --auto or --manifest");
    }
    if let Some(side) = a.size {
        for it in &mut items {
            it.image = resize(&it.image, side, side);
        }
    }
    let mut ds = ImageDataset::new(items);
    if a.split {
        ds = assign_split(ds, settings)?;
    }
    let manifest = save_dataset(out, &ds)?;
    if a.auto.is_some() {
        let paths: Vec<String> = csv_paths(&manifest)?;
        fs::write(out.join("review.csv"), review_manifest(&paths))?;
    }
    println!("{} images, counts {:?} -> {}", ds.len(), ds.class_counts(), manifest.display());
    Ok(())
}

fn csv_paths(manifest: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(manifest)?;
    Ok(text.lines().skip(1).filter_map(|l| l.split(',').next()).map(str::to_string).collect())
}

fn synth(settings: &Settings, out: &Path, a: SynthArgs) -> Result<()> {
    let exp = &settings.experiment;
    let counts = match a.counts {
        Some(c) => [c[0], c[1], c[2]],
        None => exp.synth_counts()?,
    };
    let spec = SyntheticSpec::fixture(
        a.size.unwrap_or(exp.synth_size),
        a.channels.unwrap_or(exp.synth_channels),
        counts,
        exp.seed,
    );
    let mut ds = make_synthetic(&spec);
    if a.split {
        ds = assign_split(ds, settings)?;
    }
    let manifest = save_dataset(out, &ds)?;
    println!("{} images, counts {:?} -> {}", ds.len(), ds.class_counts(), manifest.display());
    Ok(())
}

fn augment(settings: &Settings, out: &Path, a: AugmentArgs) -> Result<()> {
    let ds = open_dataset(&a.data)?;
    let (test, train): (Vec<_>, Vec<_>) = ds.items.into_iter().partition(|it| it.partition == Partition::Test);
    let target = a.target.unwrap_or(settings.experiment.augment_target);
    let mut balanced = balance_classical(&ImageDataset::new(train), target, &a.kinds, settings.experiment.seed)?;
    balanced.extend(ImageDataset::new(test));
    let manifest = save_dataset(out, &balanced)?;
    println!("{} images, counts {:?} -> {}", balanced.len(), balanced.class_counts(), manifest.display());
    Ok(())
}

fn gan_train(settings: &Settings, out: &Path, a: GanTrainArgs) -> Result<()> {
    let ds = open_dataset(&a.data)?;
    let images: Vec<&Image> = ds
        .items
        .iter()
        .filter(|it| it.label == a.class && it.partition != Partition::Test)
        .map(|it| &it.image)
        .collect();
    let mut state = match &a.resume {
        Some(path) => {
            let state = load_checkpoint(path)?;
            state.check_config(&settings.gan);
            state
        }
        None => Checkpoint::new(&settings.gan)?,
    };
    let loops = a.loops.unwrap_or(state.config.training_loops);
    let real = prepare_real(&images, &state.config)?;
    fs::create_dir_all(out)?;
    log::info!("training on {} {} images for {loops} loops", images.len(), a.class.name());
    train_gan_with(&mut state, &real, loops, &mut NoObserver, Some(out))?;
    write_loss_history(&out.join("loss.csv"), &state.history)?;
    let last = state.history.last();
    println!(
        "loop {}: d_loss {:.4} g_loss {:.4} -> {}",
        state.loop_index,
        last.map_or(f64::NAN, |r| r.d_loss),
        last.map_or(f64::NAN, |r| r.g_loss),
        out.join("final.dfgc").display()
    );
    Ok(())
}

fn gan_sample(settings: &Settings, out: &Path, a: GanSampleArgs) -> Result<()> {
    let mut state = load_checkpoint(&a.checkpoint)?;
    let mut rng = RngStream::new(settings.gan.seed).substream("sample");
    let images = sample(&mut state.generator, a.n, &mut rng)?;
    write_images(&out.join("samples"), "sample", &images)?;
    let refs: Vec<&Image> = images.iter().collect();
    save_png(&out.join("grid.png"), &image_grid(&refs, a.columns)?)?;
    println!("{} samples -> {}", images.len(), out.display());
    Ok(())
}

fn gan_interpolate(settings: &Settings, out: &Path, a: GanInterpolateArgs) -> Result<()> {
    let mut state = load_checkpoint(&a.checkpoint)?;
    let latent = state.generator.latent_size();
    let mut rng = RngStream::new(settings.gan.seed).substream("interpolate");
    let mut all = Vec::new();
    for _ in 0..a.pairs {
        let z_a: Vec<f32> = (0..latent).map(|_| rng.normal()).collect();
        let z_b: Vec<f32> = (0..latent).map(|_| rng.normal()).collect();
        all.extend(interpolate_latent(&mut state.generator, &z_a, &z_b, a.steps)?);
    }
    let refs: Vec<&Image> = all.iter().collect();
    fs::create_dir_all(out)?;
    save_png(&out.join("interpolation.png"), &image_grid(&refs, a.steps)?)?;
    println!("{} rows of {} -> {}", a.pairs, a.steps, out.join("interpolation.png").display());
    Ok(())
}

fn fid(settings: &Settings, out: &Path, a: FidArgs) -> Result<()> {
    let (mean, std) = if let (Some(rf), Some(gf)) = (&a.real_features, &a.gen_features) {
        let d = frechet_distance(&gaussian_stats(&read_feature_csv(rf)?)?, &gaussian_stats(&read_feature_csv(gf)?)?)?;
        (d, 0.0)
    } else {
        let real_dir = a.real.as_deref().context("--real is required")?;
        let real_owned = load_class(real_dir, a.class)?;
        let real: Vec<&Image> = real_owned.iter().collect();
        let mut fx = FeatureExtractor::pixel_pca(a.dim);
        fx.fit(&real)?;
        let mut rng = RngStream::new(settings.gan.seed).substream("fid");
        match (&a.generated, &a.checkpoint) {
            (Some(dir), _) => {
                if a.repeats > 1 {
                    log::warn!("--repeats only applies to --checkpoint; using the directory once");
                }
                let gen = load_image_dir(dir)?;
                let gen: Vec<&Image> = gen.iter().collect();
                (dfgan_core::eval::fid_between(&mut fx, &real, &gen)?, 0.0)
            }
            (None, Some(ckpt)) => {
                let mut state = load_checkpoint(ckpt)?;
                fid_repeated(&mut state.generator, &real, &mut fx, a.repeats, &mut rng)?
            }
            (None, None) => bail!("give --generated, --checkpoint or feature CSVs"),
        }
    };
    fs::create_dir_all(out)?;
    fs::write(
        out.join("fid.json"),
        format!("{{\n  \"mean\": {mean},\n  \"std\": {std},\n  \"repeats\": {}\n}}\n", a.repeats),
    )?;
    println!("fid {mean:.6} (std {std:.6})");
    Ok(())
}

fn load_class(dir: &Path, class: Option<DefectClass>) -> Result<Vec<Image>> {
    if dir.join("manifest.csv").exists() {
        let ds = open_dataset(dir)?;
        return Ok(class_images(&ds, class).into_iter().cloned().collect());
    }
    if class.is_some() {
        log::warn!("{} has no manifest; --class is ignored", dir.display());
    }
    load_image_dir(dir)
}

fn tsne_cmd(settings: &Settings, out: &Path, a: TsneArgs) -> Result<()> {
    let real_owned = load_class(&a.real, a.class)?;
    let mut rng = RngStream::new(settings.gan.seed).substream("tsne");
    let gen_owned = generated_images(&a.source, a.n, &mut rng)?;
    let real: Vec<&Image> = real_owned.iter().collect();
    let gen: Vec<&Image> = gen_owned.iter().collect();
    let mut fx = FeatureExtractor::pixel_pca(a.dim);
    fx.fit(&real)?;
    let features = fx.extract(&real)?.concat(&fx.extract(&gen)?)?;
    let cfg = TsneConfig {
        perplexity: a.perplexity,
        iterations: a.iterations,
        seed: settings.gan.seed,
        ..TsneConfig::default()
    };
    let result = tsne(&features, &cfg)?;
    let class = a.class.map_or("all", DefectClass::name).to_string();
    let mut groups = vec!["real".to_string(); real.len()];
    groups.extend(vec!["generated".to_string(); gen.len()]);
    let labels: Vec<usize> = groups.iter().map(|g| usize::from(g == "generated")).collect();
    let emb = Embedding2D { points: result.points, groups, classes: vec![class; labels.len()] };
    fs::create_dir_all(out)?;
    emb.write_csv(&out.join("tsne.csv"))?;
    println!(
        "perplexity {:.2}, final KL {:.4}, real/generated silhouette {:.4} -> {}",
        result.perplexity,
        result.kl_history.last().copied().unwrap_or(f64::NAN),
        silhouette(&emb.points, &labels),
        out.join("tsne.csv").display()
    );
    Ok(())
}

fn sheet(settings: &Settings, out: &Path, a: TuringSheetArgs) -> Result<()> {
    let real_owned = load_class(&a.real, a.class)?;
    let mut rng = RngStream::new(settings.gan.seed).substream("sheet-samples");
    let gen_owned = generated_images(&a.source, a.n, &mut rng)?;
    let real: Vec<&Image> = real_owned.iter().collect();
    let gen: Vec<&Image> = gen_owned.iter().collect();
    let s = turing_sheet(&real, &gen, a.n, settings.gan.seed)?;
    fs::create_dir_all(out)?;
    save_png(&out.join("sheet.png"), &s.grid)?;
    s.write_key(&out.join("key.csv"))?;
    println!("{} cells -> {}", s.key.len(), out.join("sheet.png").display());
    Ok(())
}

fn clf_train(settings: &Settings, out: &Path, a: ClfTrainArgs) -> Result<()> {
    let ds = open_dataset(&a.data)?;
    let (train, test) = match &a.test {
        Some(dir) => {
            let test = open_dataset(dir)?;
            (ds, test)
        }
        None => {
            let (test, train): (Vec<_>, Vec<_>) = ds.items.into_iter().partition(|it| it.partition == Partition::Test);
            if test.is_empty() {
                bail!("{} has no test partition; pass --test", a.data.display());
            }
            (ImageDataset::new(train), ImageDataset::new(test))
        }
    };
    let mut cfg = settings.clf.clone();
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    let (mut net, losses) = train_classifier(&train, &cfg)?;
    let report = evaluate(&mut net, &test)?;
    fs::create_dir_all(out)?;
    fs::write(out.join("metrics.json"), serde_json::to_string_pretty(&report)?)?;
    let mut csv = String::from("epoch,loss\n");
    for (i, l) in losses.iter().enumerate() {
        csv.push_str(&format!("{},{l}\n", i + 1));
    }
    fs::write(out.join("losses.csv"), csv)?;
    println!("accuracy {:.4} on {} test images -> {}", report.accuracy, test.len(), out.display());
    Ok(())
}

fn experiment_run(mut settings: Settings, out: &Path, a: ExperimentRunArgs) -> Result<()> {
    if !a.tasks.is_empty() {
        settings.experiment.tasks = a.tasks.iter().map(|&t| t as usize).collect();
    }
    if let Some(r) = a.repeats {
        settings.experiment.repeats = r;
    }
    let dataset = a.data.as_deref().map(open_dataset).transpose()?;
    fs::create_dir_all(out)?;
    fs::write(out.join("settings.cfg"), settings.to_flat())?;
    let result = run_pipeline(&settings, dataset, out)?;
    print!("{}", result.report.results_text);
    if let Some(text) = &result.report.comparison_text {
        print!("\n{text}");
    }
    Ok(())
}

fn report(out: &Path, a: ReportArgs) -> Result<()> {
    let mut results = Vec::new();
    let mut tasks: Vec<(usize, PathBuf)> = fs::read_dir(&a.runs)
        .with_context(|| format!("reading {}", a.runs.display()))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().into_owned();
            name.strip_prefix("task").and_then(|n| n.parse().ok()).map(|t| (t, e.path()))
        })
        .collect();
    tasks.sort();
    for (task, dir) in tasks {
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .is_some_and(|n| n.to_string_lossy().starts_with("repeat_") && n.to_string_lossy().ends_with(".json"))
            })
            .collect();
        files.sort();
        let reports = files
            .iter()
            .map(|p| -> Result<MetricsReport> {
                let text = fs::read_to_string(p)?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
            })
            .collect::<Result<Vec<_>>>()?;
        if reports.is_empty() {
            continue;
        }
        let mean = MetricsReport::mean(&reports)?;
        results.push(RunResult { task_id: task, seeds: Vec::new(), reports, mean });
    }
    if results.is_empty() {
        bail!("no task<N>/repeat_<r>.json reports under {}", a.runs.display());
    }
    let comparison = match results.iter().position(|r| r.task_id == a.baseline) {
        Some(b) => {
            let others: Vec<RunResult> = results.iter().filter(|r| r.task_id != a.baseline).cloned().collect();
            Some(compare(&results[b], &others)?)
        }
        None => {
            log::warn!("baseline task {} not found; writing results only", a.baseline);
            None
        }
    };
    let mut artifacts = Vec::new();
    if let Ok(entries) = fs::read_dir(a.runs.join("grids")) {
        let mut names: Vec<String> =
            entries.filter_map(|e| e.ok()).map(|e| format!("grids/{}", e.file_name().to_string_lossy())).collect();
        names.sort();
        artifacts = names;
    }
    let rendered = render_report(&results, comparison.as_ref(), &artifacts)?;
    write_report(out, &rendered)?;
    print!("{}", rendered.results_text);
    if let Some(text) = &rendered.comparison_text {
        print!("\n{text}");
    }
    Ok(())
}

fn sweep_cmd(settings: &Settings, out: &Path, a: SweepArgs) -> Result<()> {
    let ds = open_dataset(&a.data)?;
    let real: Vec<&Image> = ds
        .items
        .iter()
        .filter(|it| it.label == a.class && it.partition != Partition::Test)
        .map(|it| &it.image)
        .collect();
    let report = sweep(&settings.sweep, &settings.gan, &real)?;
    report.write(out)?;
    for (rank, &i) in report.ranking.iter().enumerate() {
        println!("{:>2}. {:<24} {:.4}", rank + 1, report.cells[i].name, report.cells[i].final_fid());
    }
    Ok(())
}
