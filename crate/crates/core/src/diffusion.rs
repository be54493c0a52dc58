//! Forward noising, the noise-prediction network and DDPM/DDIM reverse steps.
//!
//! Timesteps run over `1..=T` with the convention `alpha_bar[0] = 1`, so a
//! DDIM jump to `t_prev = 0` lands exactly on the clean-sample estimate.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::grad::{Graph, Real, Var};
use crate::nn::{cosine_lr, timestep_embedding, Adam, AdamConfig, Bound, Conv, Linear, ParamId, ParamSet};
use crate::rng::{self, domain};
use crate::synthdata::Split;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    t_max: usize,
    beta_min: f64,
    beta_max: f64,
    /// Index 0 is the empty product: beta 0, alpha 1, alpha_bar 1.
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

/// Linear beta schedule over `t_max` steps.
pub fn make_schedule(t_max: usize, beta_min: f64, beta_max: f64) -> Result<NoiseSchedule> {
    if t_max == 0 {
        return Err(Error::arg("schedule needs at least one step"));
    }
    if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
        return Err(Error::arg(format!("need 0 < beta_min <= beta_max < 1, got {beta_min}, {beta_max}")));
    }
    let mut beta = vec![0.0];
    for i in 0..t_max {
        let frac = if t_max == 1 { 0.0 } else { i as f64 / (t_max - 1) as f64 };
        beta.push(beta_min + (beta_max - beta_min) * frac);
    }
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bar = Vec::with_capacity(t_max + 1);
    let mut acc = 1.0f64;
    for &a in &alpha {
        acc *= a;
        alpha_bar.push(acc);
    }
    Ok(NoiseSchedule { t_max, beta_min, beta_max, beta, alpha, alpha_bar })
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        make_schedule(1000, 1e-4, 0.02).expect("default schedule is valid")
    }
}

impl NoiseSchedule {
    pub fn t_max(&self) -> usize {
        self.t_max
    }
    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t]
    }
    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }
    pub fn bounds(&self) -> (f64, f64) {
        (self.beta_min, self.beta_max)
    }

    fn check(&self, t: usize, lo: usize) -> Result<()> {
        if t < lo || t > self.t_max {
            return Err(Error::arg(format!("timestep {t} outside {lo}..={}", self.t_max)));
        }
        Ok(())
    }
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::arg(format!("{what}: shapes {:?} and {:?} differ", a.shape(), b.shape())));
    }
    Ok(())
}

/// Elementwise `ca * a + cb * b` in f64, rounded once.
fn lincomb(a: &Tensor, ca: f64, b: &Tensor, cb: f64) -> Result<Tensor> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| (ca * x as f64 + cb * y as f64) as f32).collect();
    Tensor::new(a.shape().to_vec(), data)
}

/// Closed-form forward sample `sqrt(ab_t) x0 + sqrt(1 - ab_t) eps`; `t = 0`
/// returns `x0`.
pub fn q_sample(x0: &Tensor, t: usize, eps: &Tensor, s: &NoiseSchedule) -> Result<Tensor> {
    same_shape(x0, eps, "q_sample")?;
    s.check(t, 0)?;
    let ab = s.alpha_bar(t);
    lincomb(x0, ab.sqrt(), eps, (1.0 - ab).sqrt())
}

/// One forward kernel `x_t = sqrt(1 - beta_t) x_{t-1} + sqrt(beta_t) eps`.
pub fn forward_step(x_prev: &Tensor, t: usize, eps: &Tensor, s: &NoiseSchedule) -> Result<Tensor> {
    same_shape(x_prev, eps, "forward_step")?;
    s.check(t, 1)?;
    let b = s.beta(t);
    lincomb(x_prev, (1.0 - b).sqrt(), eps, b.sqrt())
}

/// Clean-sample estimate from a noise prediction.
pub fn estimate_x0(x_t: &Tensor, t: usize, eps: &Tensor, s: &NoiseSchedule, clamp: bool) -> Result<Tensor> {
    same_shape(x_t, eps, "estimate_x0")?;
    s.check(t, 0)?;
    let ab = s.alpha_bar(t);
    let x0 = lincomb(x_t, 1.0 / ab.sqrt(), eps, -(1.0 - ab).sqrt() / ab.sqrt())?;
    if clamp {
        x0.map(|v| v.clamp(-1.0, 1.0))
    } else {
        Ok(x0)
    }
}

/// A DDIM transition `t -> t_prev`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepPair {
    pub t: usize,
    pub t_prev: usize,
}

impl StepPair {
    pub fn new(t: usize, t_prev: usize, s: &NoiseSchedule) -> Result<Self> {
        if t_prev >= t || t > s.t_max() {
            return Err(Error::arg(format!("invalid step pair {t} -> {t_prev} for T = {}", s.t_max())));
        }
        Ok(StepPair { t, t_prev })
    }
}

/// Uniform-stride subsequence of `steps` transitions from `T` down to 0.
pub fn ddim_pairs(s: &NoiseSchedule, steps: usize) -> Result<Vec<StepPair>> {
    if steps == 0 || steps > s.t_max() {
        return Err(Error::arg(format!("step count {steps} must be in 1..={}", s.t_max())));
    }
    let times: Vec<usize> = (0..=steps).map(|i| i * s.t_max() / steps).collect();
    (1..=steps).rev().map(|i| StepPair::new(times[i], times[i - 1], s)).collect()
}

/// Deterministic DDIM transition. With `clamp`, the clean estimate is
/// clipped to `[-1, 1]` and the noise is re-derived from the clipped
/// estimate so the pair stays consistent with `x_t`.
pub fn ddim_step(x_t: &Tensor, pair: StepPair, eps: &Tensor, s: &NoiseSchedule, clamp: bool) -> Result<Tensor> {
    let pair = StepPair::new(pair.t, pair.t_prev, s)?;
    let x0 = estimate_x0(x_t, pair.t, eps, s, clamp)?;
    let ab = s.alpha_bar(pair.t_prev);
    if !clamp {
        return lincomb(&x0, ab.sqrt(), eps, (1.0 - ab).sqrt());
    }
    let abt = s.alpha_bar(pair.t);
    let eps = lincomb(x_t, 1.0 / (1.0 - abt).sqrt(), &x0, -abt.sqrt() / (1.0 - abt).sqrt())?;
    lincomb(&x0, ab.sqrt(), &eps, (1.0 - ab).sqrt())
}

/// Ancestral step with fixed variance `beta_t`; the noise term is dropped at
/// `t = 1`.
pub fn ddpm_step(x_t: &Tensor, t: usize, eps: &Tensor, s: &NoiseSchedule, noise: &Tensor) -> Result<Tensor> {
    same_shape(x_t, eps, "ddpm_step")?;
    same_shape(x_t, noise, "ddpm_step noise")?;
    s.check(t, 1)?;
    let (a, b, ab) = (s.alpha(t), s.beta(t), s.alpha_bar(t));
    let sigma = if t == 1 { 0.0 } else { b.sqrt() };
    let (c_x, c_e) = (1.0 / a.sqrt(), -b / ((1.0 - ab).sqrt() * a.sqrt()));
    let data = x_t
        .data()
        .iter()
        .zip(eps.data())
        .zip(noise.data())
        .map(|((&x, &e), &z)| (c_x * x as f64 + c_e * e as f64 + sigma * z as f64) as f32)
        .collect();
    Tensor::new(x_t.shape().to_vec(), data)
}

/// Mean of `q(x_{t-1} | x_t, x0)`.
pub fn posterior_mean(x_t: &Tensor, t: usize, x0: &Tensor, s: &NoiseSchedule) -> Result<Tensor> {
    same_shape(x_t, x0, "posterior_mean")?;
    s.check(t, 1)?;
    let (a, b, ab, ab_prev) = (s.alpha(t), s.beta(t), s.alpha_bar(t), s.alpha_bar(t - 1));
    lincomb(x0, ab_prev.sqrt() * b / (1.0 - ab), x_t, a.sqrt() * (1.0 - ab_prev) / (1.0 - ab))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub image_shape: [usize; 3],
    pub classes: usize,
    pub width: usize,
    pub time_dim: usize,
    pub hidden: usize,
}

impl DenoiserConfig {
    pub fn new(image_shape: [usize; 3], classes: usize) -> Self {
        DenoiserConfig { image_shape, classes, width: 16, time_dim: 32, hidden: 64 }
    }
}

/// Class-conditional noise predictor: a two-resolution conv net with a
/// skip connection, conditioned through per-channel biases computed from a
/// sinusoidal time embedding plus a learned class embedding.
#[derive(Debug, Clone)]
pub struct Denoiser {
    cfg: DenoiserConfig,
    params: ParamSet,
    t_fc1: Linear,
    t_fc2: Linear,
    class_table: ParamId,
    conv_in: Conv,
    b1: Conv,
    e1: Linear,
    down: Conv,
    b2: Conv,
    e2: Linear,
    b3: Conv,
    up: Conv,
    b4: Conv,
    e4: Linear,
    conv_out: Conv,
}

impl Denoiser {
    pub fn new(cfg: DenoiserConfig, seed: u64) -> Result<Self> {
        let [c, h, w] = cfg.image_shape;
        if cfg.classes == 0 || h % 2 != 0 || w % 2 != 0 || cfg.width == 0 || cfg.time_dim < 2 {
            return Err(Error::arg(format!("unsupported denoiser config {cfg:?}")));
        }
        let mut r = rng::stream(seed, &[domain::INIT, 1]);
        let mut ps = ParamSet::new();
        let (c1, c2, hid) = (cfg.width, 2 * cfg.width, cfg.hidden);
        let t_fc1 = Linear::new(&mut ps, "time.fc1", cfg.time_dim, hid, &mut r);
        let class_table = ps.add("class.table", rng::normal_tensor(&mut r, &[cfg.classes, hid]));
        let t_fc2 = Linear::new(&mut ps, "time.fc2", hid, hid, &mut r);
        let conv_in = Conv::new(&mut ps, "conv_in", c, c1, 3, 1, &mut r, 1.0);
        let b1 = Conv::new(&mut ps, "b1", c1, c1, 3, 1, &mut r, 1.0);
        let e1 = Linear::with_gain(&mut ps, "b1.emb", hid, c1, 0.5, &mut r);
        let down = Conv::new(&mut ps, "down", c1, c2, 3, 2, &mut r, 1.0);
        let b2 = Conv::new(&mut ps, "b2", c2, c2, 3, 1, &mut r, 1.0);
        let e2 = Linear::with_gain(&mut ps, "b2.emb", hid, c2, 0.5, &mut r);
        let b3 = Conv::new(&mut ps, "b3", c2, c2, 3, 1, &mut r, 0.5);
        let up = Conv::new(&mut ps, "up", c2, c1, 3, 1, &mut r, 1.0);
        let b4 = Conv::new(&mut ps, "b4", c1, c1, 3, 1, &mut r, 1.0);
        let e4 = Linear::with_gain(&mut ps, "b4.emb", hid, c1, 0.5, &mut r);
        let conv_out = Conv::new(&mut ps, "conv_out", c1, c, 3, 1, &mut r, 0.3);
        Ok(Denoiser {
            cfg,
            params: ps,
            t_fc1,
            t_fc2,
            class_table,
            conv_in,
            b1,
            e1,
            down,
            b2,
            e2,
            b3,
            up,
            b4,
            e4,
            conv_out,
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// `x: [B, C, H, W]` to predicted noise of the same shape.
    pub fn forward<S: Real>(
        &self,
        g: &mut Graph<S>,
        p: &Bound,
        x: Var,
        steps: &[f32],
        labels: &[usize],
    ) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        let b = steps.len();
        if shape.len() != 4 || shape[0] != b || shape[1..] != self.cfg.image_shape || labels.len() != b {
            return Err(Error::arg(format!(
                "denoiser input {shape:?} with {} steps and {} labels, expected [B, {:?}]",
                b,
                labels.len(),
                self.cfg.image_shape
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= self.cfg.classes) {
            return Err(Error::arg(format!("class {bad} out of range for {} classes", self.cfg.classes)));
        }
        let hid = self.cfg.hidden;
        let temb = g.constant(timestep_embedding(steps, self.cfg.time_dim));
        let e = self.t_fc1.forward(g, p, temb)?;
        let e = g.relu(e)?;
        let rows: Vec<usize> = labels.iter().flat_map(|&l| (0..hid).map(move |j| l * hid + j)).collect();
        let cls = g.gather(p[self.class_table], rows, vec![b, hid])?;
        let e = g.add(e, cls)?;
        let e = self.t_fc2.forward(g, p, e)?;
        let e = g.relu(e)?;

        let h0 = self.conv_in.forward(g, p, x)?;
        let h1 = self.b1.forward(g, p, h0)?;
        let eb = self.e1.forward(g, p, e)?;
        let h1 = g.channel_bias(h1, eb)?;
        let h1 = g.relu(h1)?;
        let h1 = g.add(h1, h0)?;

        let h2 = self.down.forward(g, p, h1)?;
        let h2 = g.relu(h2)?;
        let h3 = self.b2.forward(g, p, h2)?;
        let eb = self.e2.forward(g, p, e)?;
        let h3 = g.channel_bias(h3, eb)?;
        let h3 = g.relu(h3)?;
        let h3 = g.add(h3, h2)?;
        let h4 = self.b3.forward(g, p, h3)?;
        let h4 = g.relu(h4)?;
        let h4 = g.add(h4, h3)?;

        let u = self.up.forward(g, p, h4)?;
        let u = g.upsample2x(u)?;
        let u = g.add(u, h1)?;
        let h5 = self.b4.forward(g, p, u)?;
        let eb = self.e4.forward(g, p, e)?;
        let h5 = g.channel_bias(h5, eb)?;
        let h5 = g.relu(h5)?;
        self.conv_out.forward(g, p, h5)
    }

    /// Noise prediction for a batch at a shared timestep.
    pub fn predict(&self, x: &Tensor, t: usize, labels: &[usize]) -> Result<Tensor> {
        let steps = vec![t as f32; labels.len()];
        let mut g = Graph::<f32>::new();
        let p = self.params.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let out = self.forward(&mut g, &p, xv, &steps, labels)?;
        Ok(g.value(out))
    }

    pub fn descriptor(&self, schedule: &NoiseSchedule) -> serde_json::Value {
        let (lo, hi) = schedule.bounds();
        json!({
            "kind": "denoiser",
            "config": self.cfg,
            "schedule": {"t_max": schedule.t_max(), "beta_min": lo, "beta_max": hi},
        })
    }

    pub fn save(&self, path: &Path, schedule: &NoiseSchedule) -> Result<String> {
        checkpoint::save(path, &self.descriptor(schedule), self.params.entries())
    }

    /// Loads a checkpoint written by [`Denoiser::save`], returning the model
    /// and the schedule it was trained with.
    pub fn load(path: &Path) -> Result<(Self, NoiseSchedule)> {
        let ck = checkpoint::load(path)?;
        checkpoint::expect_kind(&ck.descriptor, "denoiser")?;
        let bad = |e: serde_json::Error| Error::Corruption(format!("denoiser descriptor: {e}"));
        let cfg: DenoiserConfig = serde_json::from_value(ck.descriptor["config"].clone()).map_err(bad)?;
        let sd = &ck.descriptor["schedule"];
        let (t_max, lo, hi) = (sd["t_max"].as_u64(), sd["beta_min"].as_f64(), sd["beta_max"].as_f64());
        let (Some(t_max), Some(lo), Some(hi)) = (t_max, lo, hi) else {
            return Err(Error::Corruption("denoiser descriptor lacks a schedule".into()));
        };
        let schedule = make_schedule(t_max as usize, lo, hi).map_err(|e| Error::Corruption(e.to_string()))?;
        let mut model = Denoiser::new(cfg, 0).map_err(|e| Error::Corruption(e.to_string()))?;
        model.params.load(ck.tensors)?;
        Ok((model, schedule))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserTrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f32,
    pub seed: u64,
    pub width: usize,
}

impl Default for DenoiserTrainConfig {
    fn default() -> Self {
        DenoiserTrainConfig { steps: 2500, batch: 32, lr: 2e-3, seed: 0, width: 24 }
    }
}

/// Per-element mean squared noise-prediction error for one batch.
fn batch_loss<S: Real>(
    model: &Denoiser,
    g: &mut Graph<S>,
    p: &Bound,
    x_t: &Tensor,
    eps: &Tensor,
    steps: &[f32],
    labels: &[usize],
) -> Result<Var> {
    let xv = g.constant(x_t.clone());
    let pred = model.forward(g, p, xv, steps, labels)?;
    let target = g.constant(eps.clone());
    let d = g.sub(pred, target)?;
    let sq = g.mul(d, d)?;
    g.mean(sq)
}

/// Draws a noised batch: indices, per-sample timesteps and noise from `rng`.
fn noised_batch(
    split: &Split,
    s: &NoiseSchedule,
    n: usize,
    rng: &mut impl Rng,
) -> Result<(Tensor, Tensor, Vec<f32>, Vec<usize>)> {
    let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..split.len())).collect();
    let x0 = split.batch(&idx);
    let eps = rng::normal_tensor(rng, x0.shape());
    let ts: Vec<usize> = (0..n).map(|_| rng.random_range(1..=s.t_max())).collect();
    let per = x0.numel() / n;
    let mut xt = Vec::with_capacity(x0.numel());
    for (i, &t) in ts.iter().enumerate() {
        let ab = s.alpha_bar(t);
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        for j in i * per..(i + 1) * per {
            xt.push((a * x0.data()[j] as f64 + b * eps.data()[j] as f64) as f32);
        }
    }
    let labels = idx.iter().map(|&i| split.labels[i]).collect();
    Ok((Tensor::new(x0.shape().to_vec(), xt)?, eps, ts.iter().map(|&t| t as f32).collect(), labels))
}

/// Trains on `ε`-prediction MSE. Returns the model and the per-step loss curve.
pub fn train_denoiser(
    split: &Split,
    classes: usize,
    s: &NoiseSchedule,
    cfg: &DenoiserTrainConfig,
) -> Result<(Denoiser, Vec<f32>)> {
    if split.is_empty() {
        return Err(Error::arg("cannot train a denoiser on an empty dataset"));
    }
    if cfg.batch == 0 {
        return Err(Error::arg("batch size must be positive"));
    }
    let shape: [usize; 3] = split
        .image_shape()
        .try_into()
        .map_err(|_| Error::arg(format!("expected [C, H, W] images, got {:?}", split.image_shape())))?;
    let mut dcfg = DenoiserConfig::new(shape, classes);
    dcfg.width = cfg.width;
    let mut model = Denoiser::new(dcfg, cfg.seed)?;
    let mut opt = Adam::new(AdamConfig { lr: cfg.lr, ..Default::default() }, &model.params);
    let mut curve = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut r = rng::stream(cfg.seed, &[domain::TRAIN, 1, step as u64]);
        let (xt, eps, ts, labels) = noised_batch(split, s, cfg.batch, &mut r)?;
        let mut g = Graph::<f32>::new();
        let p = model.params.bind(&mut g, true);
        let loss = batch_loss(&model, &mut g, &p, &xt, &eps, &ts, &labels)?;
        curve.push(g.data(loss)[0]);
        let grads = g.backward(loss)?;
        let lr = cosine_lr(cfg.lr, step, cfg.steps);
        opt.step(&mut model.params, &p, &grads, lr);
    }
    Ok((model, curve))
}

/// Mean noise-prediction MSE over `n` held-out draws with a fixed stream.
pub fn denoising_loss(model: &Denoiser, split: &Split, s: &NoiseSchedule, n: usize, seed: u64) -> Result<f32> {
    if split.is_empty() || n == 0 {
        return Err(Error::arg("denoising loss needs samples"));
    }
    let mut r = rng::stream(seed, &[domain::EVAL, 1]);
    let mut total = 0.0f64;
    let mut left = n;
    while left > 0 {
        let m = left.min(64);
        let (xt, eps, ts, labels) = noised_batch(split, s, m, &mut r)?;
        let mut g = Graph::<f32>::new();
        let p = model.params.bind(&mut g, false);
        let loss = batch_loss(model, &mut g, &p, &xt, &eps, &ts, &labels)?;
        total += g.data(loss)[0] as f64 * m as f64;
        left -= m;
    }
    Ok((total / n as f64) as f32)
}

/// Runs the DDIM loop from `x_t` through `pairs`. `refine` receives the step
/// index, the pair, the current state and the network's noise prediction and
/// returns the noise used for the update.
pub fn ddim_loop(
    model: &Denoiser,
    s: &NoiseSchedule,
    x_t: Tensor,
    labels: &[usize],
    pairs: &[StepPair],
    clamp: bool,
    mut refine: impl FnMut(usize, StepPair, &Tensor, Tensor) -> Result<Tensor>,
) -> Result<Tensor> {
    let mut x = x_t;
    for (i, &pair) in pairs.iter().enumerate() {
        let eps = model.predict(&x, pair.t, labels)?;
        let eps_hat = refine(i, pair, &x, eps)?;
        x = ddim_step(&x, pair, &eps_hat, s, clamp)?;
    }
    Ok(x)
}

/// Starting noise for sample `index` of class `class`.
pub fn initial_noise(seed: u64, class: usize, index: usize, shape: &[usize]) -> Tensor {
    let mut r = rng::stream(seed, &[domain::SAMPLE_NOISE, class as u64, index as u64]);
    rng::normal_tensor(&mut r, shape)
}

/// Unguided class-conditional DDIM samples, `[n, C, H, W]`.
pub fn sample_unguided(
    model: &Denoiser,
    s: &NoiseSchedule,
    class: usize,
    n: usize,
    seed: u64,
    steps: usize,
    clamp: bool,
) -> Result<Tensor> {
    let shape = model.cfg.image_shape;
    let noise: Vec<Tensor> = (0..n).map(|i| initial_noise(seed, class, i, &shape)).collect();
    let pairs = ddim_pairs(s, steps)?;
    let labels = vec![class; n];
    ddim_loop(model, s, Tensor::stack(&noise)?, &labels, &pairs, clamp, |_, _, _, e| Ok(e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        let s = NoiseSchedule::default();
        assert_eq!(s.alpha_bar(0), 1.0);
        assert!((s.alpha_bar(1) - (1.0 - 1e-4)).abs() < 1e-15);
        assert!(s.alpha_bar(1000) < 0.01);
        assert!(make_schedule(1000, 0.0, 0.0).is_err());
        assert!(make_schedule(1000, 0.1, 0.05).is_err());
        assert!(make_schedule(10, 0.5, 1.0).is_err());
    }

    #[test]
    fn ddim_pairs_cover_the_horizon() {
        let s = NoiseSchedule::default();
        let p = ddim_pairs(&s, 50).unwrap();
        assert_eq!(p.len(), 50);
        assert_eq!(p[0], StepPair { t: 1000, t_prev: 980 });
        assert_eq!(p[49], StepPair { t: 20, t_prev: 0 });
        assert!(p.windows(2).all(|w| w[0].t_prev == w[1].t));
        assert!(ddim_pairs(&s, 0).is_err());
        assert!(StepPair::new(5, 5, &s).is_err());
    }

    #[test]
    fn q_sample_arithmetic() {
        // A one-step schedule with alpha_bar_1 = 0.25.
        let s = make_schedule(1, 0.75, 0.75).unwrap();
        let x0 = Tensor::from_vec(vec![2.0]).unwrap();
        let eps = Tensor::from_vec(vec![1.0]).unwrap();
        let x = q_sample(&x0, 1, &eps, &s).unwrap();
        assert!((x.data()[0] - (1.0 + 0.75f32.sqrt())).abs() < 1e-6);
        assert!(q_sample(&x0, 0, &eps, &s).unwrap().bit_eq(&x0));
        assert!(q_sample(&x0, 1, &Tensor::zeros(vec![2]), &s).is_err());
    }

    #[test]
    fn denoiser_shapes() {
        let m = Denoiser::new(DenoiserConfig::new([3, 16, 16], 4), 0).unwrap();
        assert!(m.params().num_scalars() <= 200_000);
        let x = Tensor::zeros(vec![2, 3, 16, 16]);
        let y = m.predict(&x, 500, &[0, 3]).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert!(m.predict(&x, 500, &[0, 4]).is_err());
    }
}
