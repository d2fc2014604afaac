//! Three-stage convolutional classifier for pitting / intact / rust, its
//! training loop and evaluation metrics.

mod metrics;

pub use metrics::{confusion, metrics, ClassMetrics, ConfusionMatrix, MetricsReport, METRIC_NAMES};

use serde::{Deserialize, Serialize};

use crate::data::{images_to_tensor, resize, DefectClass, Image, ImageDataset};
use crate::error::{invalid, Error, Result};
use crate::rng::RngStream;
use crate::tensor::layers::{scoped, BatchNorm, Conv2d, Dense, Module};
use crate::tensor::{BatchNormStats, Graph, Mode, Parameter, Tensor, Var};

pub const NUM_CLASSES: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClfConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f32,
    pub beta1: f32,
    pub seed: u64,
    /// Inputs are resized to this side before the first convolution.
    pub image_size: usize,
    pub channels: usize,
    pub conv_channels: Vec<usize>,
    pub conv_kernels: Vec<usize>,
    pub hidden: usize,
}

impl Default for ClfConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 100,
            lr: 0.0002,
            beta1: 0.5,
            seed: 0,
            image_size: 96,
            channels: 3,
            conv_channels: vec![16, 32, 64],
            conv_kernels: vec![5, 5, 3],
            hidden: 64,
        }
    }
}

impl ClfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(invalid!("batch_size must be >= 2"));
        }
        if self.conv_channels.len() != self.conv_kernels.len() || self.conv_channels.is_empty() {
            return Err(invalid!("conv_channels and conv_kernels must be nonempty and of equal length"));
        }
        let stages = self.conv_channels.len();
        if self.image_size == 0 || !self.image_size.is_multiple_of(1 << stages) {
            return Err(invalid!("image_size {} must be divisible by 2^{stages}", self.image_size));
        }
        if self.conv_kernels.iter().any(|k| k % 2 == 0) {
            return Err(invalid!("conv kernels must be odd for size-preserving padding"));
        }
        Ok(())
    }

    /// Width of the flattened feature map: `(size / 2^stages)² · last channels`.
    pub fn flatten_size(&self) -> usize {
        let side = self.image_size >> self.conv_channels.len();
        side * side * self.conv_channels.last().copied().unwrap_or(0)
    }
}

/// Conv (stride 1, same padding) → BN → ReLU → 2×2 max pool, repeated, then
/// dense+ReLU and a softmax head.
#[derive(Clone, Debug)]
pub struct ClfNet {
    pub convs: Vec<Conv2d>,
    pub norms: Vec<BatchNorm>,
    pub hidden: Dense,
    pub head: Dense,
    image_size: usize,
    channels: usize,
}

pub fn build_classifier(cfg: &ClfConfig, seed: u64) -> Result<ClfNet> {
    cfg.validate()?;
    let mut rng = RngStream::new(seed).substream("classifier");
    let mut convs = Vec::new();
    let mut norms = Vec::new();
    let mut cin = cfg.channels;
    for (&cout, &k) in cfg.conv_channels.iter().zip(&cfg.conv_kernels) {
        convs.push(Conv2d::new(cin, cout, k, 1, k / 2, &mut rng));
        norms.push(BatchNorm::new(cout));
        cin = cout;
    }
    let hidden = Dense::new(cfg.flatten_size(), cfg.hidden, &mut rng);
    let head = Dense::new(cfg.hidden, NUM_CLASSES, &mut rng);
    Ok(ClfNet {
        convs,
        norms,
        hidden,
        head,
        image_size: cfg.image_size,
        channels: cfg.channels,
    })
}

impl ClfNet {
    pub fn image_size(&self) -> usize {
        self.image_size
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Returns `(penultimate activations, class probabilities)`.
    pub fn forward(&mut self, g: &mut Graph, x: Var, mode: Mode) -> Result<(Var, Var)> {
        let mut h = x;
        for i in 0..self.convs.len() {
            h = self.convs[i].forward(g, h)?;
            h = self.norms[i].forward(g, h, mode)?;
            h = g.relu(h)?;
            h = g.max_pool2d(h, 2)?;
        }
        let h = g.flatten(h)?;
        let h = self.hidden.forward(g, h)?;
        let feat = g.relu(h)?;
        let logits = self.head.forward(g, feat)?;
        Ok((feat, g.softmax(logits)?))
    }

    /// Packs images as an `(N, C, H, W)` tensor at the network's input size.
    pub fn prepare(&self, images: &[&Image]) -> Result<Tensor> {
        let fitted: Vec<Image> = images
            .iter()
            .map(|img| fit_image(img, self.image_size, self.channels))
            .collect::<Result<_>>()?;
        let refs: Vec<&Image> = fitted.iter().collect();
        images_to_tensor(&refs, 1.0, 0.0)
    }

    /// Eval-mode probabilities and penultimate features for every image.
    pub fn infer(&mut self, images: &[&Image]) -> Result<(Vec<[f32; NUM_CLASSES]>, Vec<Vec<f32>>)> {
        let mut probs = Vec::with_capacity(images.len());
        let mut feats = Vec::with_capacity(images.len());
        for chunk in images.chunks(64) {
            let mut g = Graph::new();
            let x = g.input(self.prepare(chunk)?)?;
            let (f, p) = self.forward(&mut g, x, Mode::Eval)?;
            let width = g.shape(f)[1];
            for row in g.value(p).data().chunks(NUM_CLASSES) {
                probs.push([row[0], row[1], row[2]]);
            }
            feats.extend(g.value(f).data().chunks(width).map(<[f32]>::to_vec));
        }
        Ok((probs, feats))
    }

    /// Penultimate (dense hidden) activations, one row per image.
    pub fn features(&mut self, images: &[&Image]) -> Result<Vec<Vec<f32>>> {
        Ok(self.infer(images)?.1)
    }
}

fn fit_image(img: &Image, side: usize, channels: usize) -> Result<Image> {
    let img = if img.height != side || img.width != side {
        resize(img, side, side)
    } else {
        img.clone()
    };
    if img.channels == channels {
        return Ok(img);
    }
    let mut out = Image::filled(side, side, channels, 0.0);
    for y in 0..side {
        for x in 0..side {
            let mean = (0..img.channels).map(|c| img.get(y, x, c)).sum::<f32>() / img.channels as f32;
            for c in 0..channels {
                out.set(y, x, c, if img.channels == 1 { img.get(y, x, 0) } else { mean });
            }
        }
    }
    Ok(out)
}

impl Module for ClfNet {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(String, &'a Parameter)) {
        for (i, c) in self.convs.iter().enumerate() {
            c.visit_params(&mut |n, p| f(scoped(&format!("conv{i}"), n), p));
        }
        for (i, b) in self.norms.iter().enumerate() {
            b.visit_params(&mut |n, p| f(scoped(&format!("bn{i}"), n), p));
        }
        self.hidden.visit_params(&mut |n, p| f(scoped("hidden", n), p));
        self.head.visit_params(&mut |n, p| f(scoped("head", n), p));
    }

    fn visit_params_mut<'a>(&'a mut self, f: &mut dyn FnMut(String, &'a mut Parameter)) {
        for (i, c) in self.convs.iter_mut().enumerate() {
            c.visit_params_mut(&mut |n, p| f(scoped(&format!("conv{i}"), n), p));
        }
        for (i, b) in self.norms.iter_mut().enumerate() {
            b.visit_params_mut(&mut |n, p| f(scoped(&format!("bn{i}"), n), p));
        }
        self.hidden.visit_params_mut(&mut |n, p| f(scoped("hidden", n), p));
        self.head.visit_params_mut(&mut |n, p| f(scoped("head", n), p));
    }

    fn visit_stats<'a>(&'a self, f: &mut dyn FnMut(String, &'a BatchNormStats)) {
        for (i, b) in self.norms.iter().enumerate() {
            b.visit_stats(&mut |n, s| f(scoped(&format!("bn{i}"), n), s));
        }
    }

    fn visit_stats_mut<'a>(&'a mut self, f: &mut dyn FnMut(String, &'a mut BatchNormStats)) {
        for (i, b) in self.norms.iter_mut().enumerate() {
            b.visit_stats_mut(&mut |n, s| f(scoped(&format!("bn{i}"), n), s));
        }
    }
}

fn onehot(labels: &[DefectClass]) -> Tensor {
    let mut t = Tensor::zeros(&[labels.len(), NUM_CLASSES]);
    for (i, l) in labels.iter().enumerate() {
        t.data_mut()[i * NUM_CLASSES + l.id()] = 1.0;
    }
    t
}

/// Trains a fresh network with cross-entropy on one-hot labels and Adam.
/// Returns the final-epoch model and the mean loss of every epoch.
pub fn train_classifier(trainset: &ImageDataset, cfg: &ClfConfig) -> Result<(ClfNet, Vec<f64>)> {
    cfg.validate()?;
    if trainset.is_empty() {
        return Err(Error::Insufficient("classifier training set is empty".into()));
    }
    for (c, n) in DefectClass::ALL.iter().zip(trainset.class_counts()) {
        if n == 0 {
            log::warn!("class {c} has no training images");
        }
    }
    let mut net = build_classifier(cfg, cfg.seed)?;
    let images = trainset.images();
    let x_all = net.prepare(&images)?;
    let labels = trainset.labels();
    let mut opt = crate::tensor::Adam::new(cfg.lr, cfg.beta1);
    let shuffle_root = RngStream::new(cfg.seed).substream("shuffle");
    let n = images.len();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let order = shuffle_root.fork(epoch as u64).permutation(n);
        let mut total = 0.0;
        let mut seen = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            // Batch norm needs two samples; a trailing singleton is skipped.
            if batch.len() < 2 {
                continue;
            }
            let rows: Vec<Tensor> = batch
                .iter()
                .map(|&i| x_all.slice_rows(i, i + 1))
                .collect::<Result<_>>()?;
            let mut shape = x_all.shape().to_vec();
            shape[0] = batch.len();
            let xb = Tensor::stack(&rows)?.reshape(&shape)?;
            let yb: Vec<DefectClass> = batch.iter().map(|&i| labels[i]).collect();
            let mut g = Graph::new();
            let x = g.input(xb)?;
            let (_, p) = net.forward(&mut g, x, Mode::Train)?;
            let loss = g.cross_entropy(p, &onehot(&yb))?;
            let value = f64::from(g.value(loss).item());
            if !value.is_finite() {
                return Err(Error::NonFinite { op: "classifier loss".into() });
            }
            g.backward(loss)?;
            g.write_grads(net.params_mut());
            opt.step(net.params_mut())?;
            total += value * batch.len() as f64;
            seen += batch.len();
        }
        let mean = if seen > 0 { total / seen as f64 } else { 0.0 };
        log::debug!("epoch {epoch}: loss {mean:.5}");
        losses.push(mean);
    }
    Ok((net, losses))
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Predicted classes and probability rows in input order.
pub fn predict(model: &mut ClfNet, images: &[&Image]) -> Result<(Vec<DefectClass>, Vec<[f32; NUM_CLASSES]>)> {
    if images.is_empty() {
        return Ok((Vec::new(), Vec::new()));
    }
    let (probs, _) = model.infer(images)?;
    let labels = probs
        .iter()
        .map(|r| DefectClass::from_id(argmax(r)))
        .collect::<Result<_>>()?;
    Ok((labels, probs))
}

/// Predicts `testset` and summarizes the result.
pub fn evaluate(model: &mut ClfNet, testset: &ImageDataset) -> Result<MetricsReport> {
    let (pred, _) = predict(model, &testset.images())?;
    metrics(&confusion(&testset.labels(), &pred)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_synthetic, split, SyntheticSpec};

    fn small() -> ClfConfig {
        ClfConfig {
            image_size: 16,
            channels: 1,
            conv_channels: vec![4, 8, 8],
            hidden: 8,
            batch_size: 8,
            epochs: 3,
            ..ClfConfig::default()
        }
    }

    #[test]
    fn table_layout_shapes() {
        let cfg = ClfConfig::default();
        assert_eq!(cfg.flatten_size(), 9216);
        let net = build_classifier(&cfg, 0).unwrap();
        assert_eq!(net.hidden.weight.value.shape(), &[9216, 64]);
        assert_eq!(net.head.weight.value.shape(), &[64, 3]);
        assert_eq!(net.convs[2].weight.value.shape(), &[64, 32, 3, 3]);
    }

    #[test]
    fn rows_are_distributions_and_order_preserved() {
        let cfg = small();
        let mut net = build_classifier(&cfg, 1).unwrap();
        let imgs: Vec<Image> = (0..5).map(|i| Image::filled(16, 16, 1, i as f32 / 5.0)).collect();
        let refs: Vec<&Image> = imgs.iter().collect();
        let (_, probs) = predict(&mut net, &refs).unwrap();
        for r in &probs {
            assert!((r.iter().sum::<f32>() - 1.0).abs() < 1e-5);
        }
        let (_, single) = predict(&mut net, &refs[3..4]).unwrap();
        assert_eq!(single[0], probs[3]);
        assert_eq!(net.features(&refs).unwrap()[0].len(), 8);
    }

    #[test]
    fn argmax_ties_lowest() {
        assert_eq!(argmax(&[0.2, 0.5, 0.3]), 1);
        assert_eq!(argmax(&[1.0 / 3.0; 3]), 0);
        assert_eq!(argmax(&[0.1, 0.45, 0.45]), 1);
    }

    #[test]
    fn zero_epochs_returns_init_and_training_is_deterministic() {
        let ds = make_synthetic(&SyntheticSpec::fixture(16, 1, [6, 6, 6], 0));
        let cfg0 = ClfConfig { epochs: 0, ..small() };
        let (net, losses) = train_classifier(&ds, &cfg0).unwrap();
        assert!(losses.is_empty());
        assert_eq!(net.snapshot(), build_classifier(&cfg0, cfg0.seed).unwrap().snapshot());
        let cfg = small();
        let (mut a, la) = train_classifier(&ds, &cfg).unwrap();
        let (mut b, lb) = train_classifier(&ds, &cfg).unwrap();
        assert_eq!(la, lb);
        let (_, test) = split(&ds, [3, 3, 3], 1).unwrap();
        assert_eq!(evaluate(&mut a, &test).unwrap(), evaluate(&mut b, &test).unwrap());
    }
}
