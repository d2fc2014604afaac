use std::path::Path;

use super::{Discriminator, GanConfig, Generator};
use crate::data::{images_to_tensor, resize, tensor_to_images, Image};
use crate::error::{invalid, Error, Result};
use crate::rng::RngStream;
use crate::tensor::layers::Module;
use crate::tensor::{Adam, Graph, Mode, Tensor};

/// Full training state: both networks, both optimizers, loop counter and
/// loss history.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: GanConfig,
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub opt_g: Adam,
    pub opt_d: Adam,
    /// Number of completed training loops.
    pub loop_index: u64,
    pub history: Vec<LossRecord>,
}

/// Mean losses of one loop.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub loop_index: u64,
    pub d_loss: f64,
    pub g_loss: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepKind {
    Discriminator,
    Generator,
}

/// Hooks around every optimizer step and loop; used for FID tracking and
/// for instrumenting the training protocol.
pub trait TrainObserver {
    fn before_step(&mut self, _state: &Checkpoint, _kind: StepKind) {}
    fn after_step(&mut self, _state: &Checkpoint, _kind: StepKind, _loss: f64) {}
    fn after_loop(&mut self, _state: &mut Checkpoint) -> Result<()> {
        Ok(())
    }
}

pub struct NoObserver;

impl TrainObserver for NoObserver {}

impl Checkpoint {
    /// Freshly initialized networks for `cfg`.
    pub fn new(cfg: &GanConfig) -> Result<Self> {
        cfg.validate()?;
        if !(100..=2000).contains(&cfg.latent_size) {
            log::warn!("latent size {} is outside the 100-2000 range", cfg.latent_size);
        }
        let root = RngStream::new(cfg.seed);
        Ok(Self {
            config: cfg.clone(),
            generator: Generator::new(cfg, &mut root.substream("generator"))?,
            discriminator: Discriminator::new(cfg, &mut root.substream("discriminator"))?,
            opt_g: Adam::new(cfg.lr, cfg.beta1),
            opt_d: Adam::new(cfg.lr, cfg.beta1),
            loop_index: 0,
            history: Vec::new(),
        })
    }

    pub fn fingerprint(&self) -> u64 {
        self.config.fingerprint()
    }
}

fn finite(loss: f64, what: &str) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::NonFinite { op: format!("{what} loss") })
    }
}

/// Latents drawn from N(0, 1), shape `(n, latent)`.
fn draw_latents(n: usize, latent: usize, rng: &mut RngStream) -> Tensor {
    Tensor::randn(&[n, latent], 1.0, rng)
}

/// One discriminator update: BCE of D(real) against `real_label` and of
/// D(G(z)) against `fake_label`, averaged. G is frozen throughout.
pub fn discriminator_step(
    gen: &mut Generator,
    disc: &mut Discriminator,
    opt_d: &mut Adam,
    real_batch: &Tensor,
    cfg: &GanConfig,
    rng: &mut RngStream,
) -> Result<f64> {
    let b = real_batch.shape()[0];
    if b != cfg.batch_size {
        return Err(invalid!("real batch has {b} images, batch_size is {}", cfg.batch_size));
    }
    gen.set_trainable(false);
    disc.set_trainable(true);
    let mut g = Graph::new();
    let z = g.input(draw_latents(b, cfg.latent_size, rng))?;
    let out = (|| {
        let fake = gen.forward(&mut g, z, Mode::Train)?;
        let real = g.input(real_batch.clone())?;
        let p_real = disc.forward(&mut g, real, Mode::Train, rng)?;
        let p_fake = disc.forward(&mut g, fake, Mode::Train, rng)?;
        let l_real = g.bce_loss(p_real, &Tensor::full(&[b, 1], cfg.real_label))?;
        let l_fake = g.bce_loss(p_fake, &Tensor::full(&[b, 1], cfg.fake_label))?;
        let total = g.add(l_real, l_fake)?;
        let loss = g.scale(total, 0.5)?;
        let value = finite(f64::from(g.value(loss).item()), "discriminator")?;
        g.backward(loss)?;
        g.write_grads(disc.params_mut());
        opt_d.step(disc.params_mut())?;
        Ok(value)
    })();
    gen.set_trainable(true);
    out
}

/// One generator update with the non-saturating loss −mean log D(G(z)).
/// Targets are always 1: smoothing never applies here. D is frozen.
pub fn generator_step(
    gen: &mut Generator,
    disc: &mut Discriminator,
    opt_g: &mut Adam,
    cfg: &GanConfig,
    rng: &mut RngStream,
) -> Result<f64> {
    let b = cfg.batch_size;
    disc.set_trainable(false);
    gen.set_trainable(true);
    let mut g = Graph::new();
    let z = g.input(draw_latents(b, cfg.latent_size, rng))?;
    let out = (|| {
        let fake = gen.forward(&mut g, z, Mode::Train)?;
        let p = disc.forward(&mut g, fake, Mode::Train, rng)?;
        let loss = g.bce_loss(p, &Tensor::full(&[b, 1], 1.0))?;
        let value = finite(f64::from(g.value(loss).item()), "generator")?;
        g.backward(loss)?;
        g.write_grads(gen.params_mut());
        opt_g.step(gen.params_mut())?;
        Ok(value)
    })();
    disc.set_trainable(true);
    out
}

/// Resizes to the configured side, matches the channel count and rescales
/// [0, 1] to [−1, 1]. Returns `(N, C, H, W)`.
pub fn prepare_real(images: &[&Image], cfg: &GanConfig) -> Result<Tensor> {
    if images.is_empty() {
        return Err(Error::Insufficient("GAN training set is empty".into()));
    }
    let side = cfg.image_size;
    let want = cfg.channels();
    let converted: Vec<Image> = images
        .iter()
        .map(|img| {
            let img = if img.height != side || img.width != side {
                resize(img, side, side)
            } else {
                (*img).clone()
            };
            convert_channels(&img, want)
        })
        .collect();
    let refs: Vec<&Image> = converted.iter().collect();
    images_to_tensor(&refs, 2.0, -1.0)
}

fn convert_channels(img: &Image, want: usize) -> Image {
    if img.channels == want {
        return img.clone();
    }
    let mut out = Image::filled(img.height, img.width, want, 0.0);
    for y in 0..img.height {
        for x in 0..img.width {
            let mean = (0..img.channels).map(|c| img.get(y, x, c)).sum::<f32>() / img.channels as f32;
            for c in 0..want {
                let v = if img.channels == 1 { img.get(y, x, 0) } else { mean };
                out.set(y, x, c, v);
            }
        }
    }
    out
}

fn select_batch(real: &Tensor, b: usize, rng: &mut RngStream) -> Result<Tensor> {
    let n = real.shape()[0];
    let rows: Vec<usize> = if n >= b {
        let mut idx = rng.permutation(n);
        idx.truncate(b);
        idx
    } else {
        (0..b).map(|_| rng.below(n)).collect()
    };
    let parts: Vec<Tensor> = rows
        .into_iter()
        .map(|r| real.slice_rows(r, r + 1))
        .collect::<Result<_>>()?;
    let stacked = Tensor::stack(&parts)?;
    let mut shape = real.shape().to_vec();
    shape[0] = b;
    stacked.reshape(&shape)
}

fn loop_stream(seed: u64, loop_index: u64) -> RngStream {
    RngStream::new(seed).substream("train").fork(loop_index)
}

/// One training loop: `k_d` discriminator steps, then `k_g` generator steps.
pub fn run_loop(state: &mut Checkpoint, real: &Tensor, observer: &mut dyn TrainObserver) -> Result<LossRecord> {
    let cfg = state.config.clone();
    let lrng = loop_stream(cfg.seed, state.loop_index);
    let mut batch_rng = lrng.substream("batch");
    let shared = if cfg.reuse_batch_per_loop {
        Some(select_batch(real, cfg.batch_size, &mut batch_rng)?)
    } else {
        None
    };
    let mut d_sum = 0.0;
    for j in 0..cfg.k_d {
        let batch = match &shared {
            Some(b) => b.clone(),
            None => select_batch(real, cfg.batch_size, &mut batch_rng)?,
        };
        let mut rng = lrng.substream("d").fork(j as u64);
        observer.before_step(state, StepKind::Discriminator);
        let loss = discriminator_step(
            &mut state.generator,
            &mut state.discriminator,
            &mut state.opt_d,
            &batch,
            &cfg,
            &mut rng,
        )?;
        observer.after_step(state, StepKind::Discriminator, loss);
        d_sum += loss;
    }
    let mut g_sum = 0.0;
    for j in 0..cfg.k_g {
        let mut rng = lrng.substream("g").fork(j as u64);
        observer.before_step(state, StepKind::Generator);
        let loss = generator_step(&mut state.generator, &mut state.discriminator, &mut state.opt_g, &cfg, &mut rng)?;
        observer.after_step(state, StepKind::Generator, loss);
        g_sum += loss;
    }
    let record = LossRecord {
        loop_index: state.loop_index,
        d_loss: d_sum / cfg.k_d as f64,
        g_loss: g_sum / cfg.k_g as f64,
    };
    state.history.push(record);
    state.loop_index += 1;
    observer.after_loop(state)?;
    Ok(record)
}

/// Runs `loops` further loops, saving `ckpt_<loop>.dfgc` into `snapshots`
/// every `checkpoint_every` loops and at the end.
pub fn train_gan_with(
    state: &mut Checkpoint,
    real: &Tensor,
    loops: usize,
    observer: &mut dyn TrainObserver,
    snapshots: Option<&Path>,
) -> Result<()> {
    if real.shape()[0] < state.config.batch_size {
        log::warn!(
            "training set has {} images, fewer than batch size {}; sampling with replacement",
            real.shape()[0],
            state.config.batch_size
        );
    }
    let every = state.config.checkpoint_every as u64;
    for _ in 0..loops {
        let rec = run_loop(state, real, observer)?;
        if rec.loop_index % 500 == 0 {
            log::info!("loop {}: d_loss {:.4} g_loss {:.4}", rec.loop_index, rec.d_loss, rec.g_loss);
        }
        if let Some(dir) = snapshots {
            if every > 0 && state.loop_index.is_multiple_of(every) {
                super::save_checkpoint(state, &dir.join(format!("ckpt_{:06}.dfgc", state.loop_index)))?;
            }
        }
    }
    if let Some(dir) = snapshots {
        super::save_checkpoint(state, &dir.join("final.dfgc"))?;
    }
    Ok(())
}

/// Trains from initialization for `cfg.training_loops` loops.
pub fn train_gan(trainset: &[&Image], cfg: &GanConfig) -> Result<Checkpoint> {
    let real = prepare_real(trainset, cfg)?;
    let mut state = Checkpoint::new(cfg)?;
    train_gan_with(&mut state, &real, cfg.training_loops, &mut NoObserver, None)?;
    Ok(state)
}

const SAMPLE_CHUNK: usize = 64;

/// Images for explicit latents `(n, latent)`, mapped from [−1, 1] to [0, 1].
/// Batch norm runs on its running statistics, so each image depends only on
/// its own latent.
pub fn sample_latents(gen: &mut Generator, latents: &Tensor) -> Result<Vec<Image>> {
    let shape = latents.shape();
    if shape.len() != 2 || shape[1] != gen.latent_size() {
        return Err(invalid!(
            "latents must have shape (n, {}), got {shape:?}",
            gen.latent_size()
        ));
    }
    let n = shape[0];
    let mut out = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let end = (start + SAMPLE_CHUNK).min(n);
        let mut g = Graph::new();
        let z = g.input(latents.slice_rows(start, end)?)?;
        let x = gen.forward(&mut g, z, Mode::Eval)?;
        out.extend(tensor_to_images(g.value(x), 2.0, -1.0)?);
        start = end;
    }
    Ok(out)
}

/// `n` images from fresh N(0, 1) latents.
pub fn sample(gen: &mut Generator, n: usize, rng: &mut RngStream) -> Result<Vec<Image>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let z = draw_latents(n, gen.latent_size(), rng);
    sample_latents(gen, &z)
}

/// CSV `loop,d_loss,g_loss`.
pub fn write_loss_history(path: &Path, history: &[LossRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["loop", "d_loss", "g_loss"])?;
    for r in history {
        w.write_record([r.loop_index.to_string(), r.d_loss.to_string(), r.g_loss.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_synthetic, DefectClass, SyntheticSpec};

    fn tiny() -> GanConfig {
        GanConfig {
            batch_size: 8,
            latent_size: 8,
            gen_channels: vec![8, 4],
            disc_channels: vec![4, 8],
            ..GanConfig::toy()
        }
    }

    fn reals(cfg: &GanConfig, n: usize) -> Tensor {
        let ds = make_synthetic(&SyntheticSpec::fixture(16, 1, [n, 0, 0], 2));
        let imgs: Vec<&Image> = ds.of_class(DefectClass::Pitting).map(|it| &it.image).collect();
        prepare_real(&imgs, cfg).unwrap()
    }

    #[test]
    fn zero_loops_keeps_init() {
        let cfg = tiny();
        let mut st = Checkpoint::new(&cfg).unwrap();
        let before = (st.generator.snapshot(), st.discriminator.snapshot());
        train_gan_with(&mut st, &reals(&cfg, 10), 0, &mut NoObserver, None).unwrap();
        assert_eq!(before, (st.generator.snapshot(), st.discriminator.snapshot()));
    }

    #[test]
    fn steps_freeze_the_other_net() {
        let cfg = tiny();
        let mut st = Checkpoint::new(&cfg).unwrap();
        let real = reals(&cfg, 10);
        let g0 = st.generator.snapshot();
        let mut rng = RngStream::new(1);
        let batch = select_batch(&real, 8, &mut rng).unwrap();
        discriminator_step(&mut st.generator, &mut st.discriminator, &mut st.opt_d, &batch, &cfg, &mut rng).unwrap();
        assert_eq!(g0, st.generator.snapshot());
        let d0 = st.discriminator.snapshot();
        let s0: Vec<_> = {
            let mut v = Vec::new();
            st.discriminator.visit_stats(&mut |_, s| v.push(s.clone()));
            v
        };
        generator_step(&mut st.generator, &mut st.discriminator, &mut st.opt_g, &cfg, &mut rng).unwrap();
        assert_eq!(d0, st.discriminator.snapshot());
        let mut s1 = Vec::new();
        st.discriminator.visit_stats(&mut |_, s| s1.push(s.clone()));
        assert_eq!(s0, s1);
        assert_ne!(g0, st.generator.snapshot());
    }

    #[test]
    fn wrong_batch_rejected() {
        let cfg = tiny();
        let mut st = Checkpoint::new(&cfg).unwrap();
        let real = reals(&cfg, 4);
        let mut rng = RngStream::new(1);
        assert!(discriminator_step(&mut st.generator, &mut st.discriminator, &mut st.opt_d, &real, &cfg, &mut rng)
            .is_err());
    }

    #[test]
    fn training_is_deterministic_and_counts_steps() {
        let cfg = tiny();
        let real = reals(&cfg, 5);
        let run = || {
            let mut st = Checkpoint::new(&cfg).unwrap();
            train_gan_with(&mut st, &real, 3, &mut NoObserver, None).unwrap();
            st
        };
        let (a, b) = (run(), run());
        assert_eq!(a.history, b.history);
        assert_eq!(a.generator.snapshot(), b.generator.snapshot());
        assert_eq!(a.opt_d.t, 12);
        assert_eq!(a.opt_g.t, 9);
        assert_eq!(a.loop_index, 3);
    }

    #[test]
    fn samples_in_unit_range_and_reproducible() {
        let cfg = tiny();
        let mut st = Checkpoint::new(&cfg).unwrap();
        let z = Tensor::randn(&[3, 8], 1.0, &mut RngStream::new(4));
        let a = sample_latents(&mut st.generator, &z).unwrap();
        let b = sample_latents(&mut st.generator, &z).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        assert!(a.iter().all(|im| im.in_unit_range() && im.height == 16));
        let single = sample_latents(&mut st.generator, &z.slice_rows(1, 2).unwrap()).unwrap();
        assert_eq!(single[0], a[1]);
        assert!(sample_latents(&mut st.generator, &Tensor::zeros(&[2, 5])).is_err());
    }

    #[test]
    fn loss_history_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("loss.csv");
        let h = [LossRecord { loop_index: 0, d_loss: 0.5, g_loss: 0.25 }];
        write_loss_history(&p, &h).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "loop,d_loss,g_loss\n0,0.5,0.25\n");
    }
}
