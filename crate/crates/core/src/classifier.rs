//! Small convnet classifier, used both for downstream evaluation and, in its
//! noise-aware form, as the classifier-guidance baseline.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::checkpoint;
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::grad::{Graph, Real, Var};
use crate::nn::{cosine_lr, cross_entropy, timestep_embedding, Adam, AdamConfig, Bound, Conv, Linear, ParamSet};
use crate::rng::{self, domain};
use crate::synthdata::Split;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub image_shape: [usize; 3],
    pub classes: usize,
    pub width: usize,
    /// Conditions the first block on the diffusion timestep.
    pub noise_aware: bool,
    pub time_dim: usize,
}

impl ClassifierConfig {
    pub fn new(image_shape: [usize; 3], classes: usize) -> Self {
        ClassifierConfig { image_shape, classes, width: 16, noise_aware: false, time_dim: 32 }
    }
}

/// Three conv blocks (the last two strided), global average pooling and a
/// linear head.
#[derive(Debug, Clone)]
pub struct Classifier {
    cfg: ClassifierConfig,
    params: ParamSet,
    c1: Conv,
    c2: Conv,
    c3: Conv,
    temb: Option<Linear>,
    head: Linear,
}

impl Classifier {
    pub fn new(cfg: ClassifierConfig, seed: u64) -> Result<Self> {
        let [c, h, w] = cfg.image_shape;
        if cfg.classes < 2 || cfg.width == 0 || h < 4 || w < 4 {
            return Err(Error::arg(format!("unsupported classifier config {cfg:?}")));
        }
        let mut r = rng::stream(seed, &[domain::INIT, 3]);
        let mut ps = ParamSet::new();
        let wd = cfg.width;
        let c1 = Conv::new(&mut ps, "c1", c, wd, 3, 1, &mut r, 1.0);
        let c2 = Conv::new(&mut ps, "c2", wd, 2 * wd, 3, 2, &mut r, 1.0);
        let c3 = Conv::new(&mut ps, "c3", 2 * wd, 4 * wd, 3, 2, &mut r, 1.0);
        let temb = cfg.noise_aware.then(|| Linear::with_gain(&mut ps, "temb", cfg.time_dim, wd, 0.5, &mut r));
        let head = Linear::new(&mut ps, "head", 4 * wd, cfg.classes, &mut r);
        Ok(Classifier { cfg, params: ps, c1, c2, c3, temb, head })
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// Logits `[B, classes]`. `steps` is required for noise-aware models and
    /// ignored otherwise.
    pub fn forward<S: Real>(&self, g: &mut Graph<S>, p: &Bound, x: Var, steps: Option<&[f32]>) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 4 || shape[1..] != self.cfg.image_shape {
            return Err(Error::arg(format!("classifier expects [B, {:?}], got {shape:?}", self.cfg.image_shape)));
        }
        let mut h = self.c1.forward(g, p, x)?;
        if let Some(temb) = &self.temb {
            let steps = steps.ok_or_else(|| Error::arg("noise-aware classifier needs timesteps"))?;
            if steps.len() != shape[0] {
                return Err(Error::arg(format!("{} timesteps for a batch of {}", steps.len(), shape[0])));
            }
            let e = g.constant(timestep_embedding(steps, self.cfg.time_dim));
            let e = temb.forward(g, p, e)?;
            h = g.channel_bias(h, e)?;
        }
        let h = g.relu(h)?;
        let h = self.c2.forward(g, p, h)?;
        let h = g.relu(h)?;
        let h = self.c3.forward(g, p, h)?;
        let h = g.relu(h)?;
        let h = g.spatial_mean(h)?;
        self.head.forward(g, p, h)
    }

    pub fn logits(&self, x: &Tensor, steps: Option<&[f32]>) -> Result<Tensor> {
        let mut g = Graph::<f32>::new();
        let p = self.params.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let out = self.forward(&mut g, &p, xv, steps)?;
        Ok(g.value(out))
    }

    /// Argmax predictions, ties to the lowest class id.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let steps = self.cfg.noise_aware.then(|| vec![0.0f32; x.shape()[0]]);
        let l = self.logits(x, steps.as_deref())?;
        Ok((0..l.shape()[0]).map(|i| argmax(l.row(i))).collect())
    }

    pub fn descriptor(&self) -> serde_json::Value {
        json!({"kind": "classifier", "config": self.cfg})
    }

    pub fn save(&self, path: &Path) -> Result<String> {
        checkpoint::save(path, &self.descriptor(), self.params.entries())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = checkpoint::load(path)?;
        checkpoint::expect_kind(&ck.descriptor, "classifier")?;
        let cfg: ClassifierConfig = serde_json::from_value(ck.descriptor["config"].clone())
            .map_err(|e| Error::Corruption(format!("classifier descriptor: {e}")))?;
        let mut model = Classifier::new(cfg, 0).map_err(|e| Error::Corruption(e.to_string()))?;
        model.params.load(ck.tensors)?;
        Ok(model)
    }
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierTrainConfig {
    pub epochs: usize,
    /// Batch size; `None` means `min(len, 64)`.
    pub batch: Option<usize>,
    pub lr: f32,
    pub flip: bool,
    pub width: usize,
    pub seed: u64,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        ClassifierTrainConfig { epochs: 60, batch: None, lr: 3e-3, flip: true, width: 16, seed: 0 }
    }
}

fn image_shape(split: &Split) -> Result<[usize; 3]> {
    split
        .image_shape()
        .try_into()
        .map_err(|_| Error::arg(format!("expected [C, H, W] images, got {:?}", split.image_shape())))
}

/// Mirrors each image left-right in place where `mask` is set.
pub fn hflip(batch: &mut Tensor, mask: &[bool]) {
    let shape = batch.shape().to_vec();
    let w = shape[3];
    let per = shape[1..].iter().product::<usize>();
    for (i, &f) in mask.iter().enumerate() {
        if f {
            for row in batch.data_mut()[i * per..(i + 1) * per].chunks_exact_mut(w) {
                row.reverse();
            }
        }
    }
}

/// Cross-entropy training with optional horizontal flips and a cosine
/// learning-rate decay. With `noise`, inputs are forward-diffused to a
/// uniformly drawn timestep and the model is built noise-aware.
pub fn train_classifier(
    split: &Split,
    classes: usize,
    cfg: &ClassifierTrainConfig,
    noise: Option<&NoiseSchedule>,
) -> Result<Classifier> {
    if split.is_empty() {
        return Err(Error::arg("cannot train a classifier on an empty set"));
    }
    if let Some(&bad) = split.labels.iter().find(|&&l| l >= classes) {
        return Err(Error::arg(format!("label {bad} out of range for {classes} classes")));
    }
    let mut ccfg = ClassifierConfig::new(image_shape(split)?, classes);
    ccfg.width = cfg.width;
    ccfg.noise_aware = noise.is_some();
    let mut model = Classifier::new(ccfg, cfg.seed)?;
    let n = split.len();
    let batch = cfg.batch.unwrap_or(n.min(64)).clamp(1, n);
    let per_epoch = n.div_ceil(batch);
    let total = cfg.epochs * per_epoch;
    let mut opt = Adam::new(AdamConfig { lr: cfg.lr, ..Default::default() }, &model.params);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut r = rng::stream(cfg.seed, &[domain::TRAIN, 3, epoch as u64]);
        let order = rng::permutation(&mut r, n);
        for chunk in order.chunks(batch) {
            let mut x = split.batch(chunk);
            if cfg.flip {
                let mask: Vec<bool> = (0..chunk.len()).map(|_| r.random_bool(0.5)).collect();
                hflip(&mut x, &mask);
            }
            let steps = noise.map(|s| diffuse_batch(&mut x, s, &mut r));
            let labels: Vec<usize> = chunk.iter().map(|&i| split.labels[i]).collect();
            let mut g = Graph::<f32>::new();
            let p = model.params.bind(&mut g, true);
            let xv = g.constant(x);
            let logits = model.forward(&mut g, &p, xv, steps.as_deref())?;
            let loss = cross_entropy(&mut g, logits, &labels)?;
            let grads = g.backward(loss)?;
            opt.step(&mut model.params, &p, &grads, cosine_lr(cfg.lr, step, total));
            step += 1;
        }
    }
    Ok(model)
}

/// Replaces each image with a forward-diffused copy at a uniform timestep
/// (half the time t = 0 is kept clean) and returns the timesteps.
fn diffuse_batch(x: &mut Tensor, s: &NoiseSchedule, r: &mut impl Rng) -> Vec<f32> {
    let n = x.shape()[0];
    let per = x.numel() / n;
    let mut steps = Vec::with_capacity(n);
    for i in 0..n {
        let t = if r.random_bool(0.5) { 0 } else { r.random_range(1..=s.t_max()) };
        steps.push(t as f32);
        if t == 0 {
            continue;
        }
        let ab = s.alpha_bar(t);
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        let eps = rng::normal_vec(r, per);
        for (v, z) in x.data_mut()[i * per..(i + 1) * per].iter_mut().zip(eps) {
            *v = (a * *v as f64 + b * z as f64) as f32;
        }
    }
    steps
}

/// Fraction of `split` whose argmax prediction matches the label.
pub fn evaluate_top1(model: &Classifier, split: &Split) -> Result<f64> {
    if split.is_empty() {
        return Err(Error::arg("cannot evaluate on an empty split"));
    }
    let mut correct = 0usize;
    let idx: Vec<usize> = (0..split.len()).collect();
    for chunk in idx.chunks(256) {
        let pred = model.predict(&split.batch(chunk))?;
        correct += chunk.iter().zip(pred).filter(|(&i, p)| split.labels[i] == *p).count();
    }
    Ok(correct as f64 / split.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }

    #[test]
    fn flip_is_involution() {
        let x = rng::normal_tensor(&mut rng::stream(1, &[]), &[2, 3, 4, 4]);
        let mut y = x.clone();
        hflip(&mut y, &[true, false]);
        assert!(!y.bit_eq(&x));
        assert_eq!(&y.data()[48..], &x.data()[48..]);
        assert_eq!(y.data()[0], x.data()[3]);
        hflip(&mut y, &[true, false]);
        assert!(y.bit_eq(&x));
    }

    #[test]
    fn parameter_budget() {
        let c = Classifier::new(ClassifierConfig::new([3, 16, 16], 8), 0).unwrap();
        assert!(c.params().num_scalars() <= 100_000);
    }
}
