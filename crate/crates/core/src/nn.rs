//! Parameter storage, layers and the optimiser shared by every model.

use std::ops::Index;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::{Gradients, Graph, Real, Var};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

/// Ordered, named parameter tensors.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

/// Parameters placed on a graph, indexable by [`ParamId`].
pub struct Bound(Vec<Var>);

impl Index<ParamId> for Bound {
    type Output = Var;
    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.0]
    }
}

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        self.entries.push((name.into(), t));
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].1
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    /// Adds every parameter to `g`, as inputs when `trainable` and as
    /// constants otherwise.
    pub fn bind<S: Real>(&self, g: &mut Graph<S>, trainable: bool) -> Bound {
        Bound(
            self.entries
                .iter()
                .map(|(_, t)| if trainable { g.input(t.clone()) } else { g.constant(t.clone()) })
                .collect(),
        )
    }

    /// Replaces all tensors from a `(name, tensor)` list with matching names
    /// and shapes, in order.
    pub fn load(&mut self, tensors: Vec<(String, Tensor)>) -> Result<()> {
        if tensors.len() != self.entries.len() {
            return Err(Error::Corruption(format!(
                "expected {} parameter tensors, found {}",
                self.entries.len(),
                tensors.len()
            )));
        }
        for ((name, t), (want_name, want)) in tensors.into_iter().zip(self.entries.iter_mut()) {
            if &name != want_name || t.shape() != want.shape() {
                return Err(Error::Corruption(format!(
                    "parameter {name} {:?} does not match {want_name} {:?}",
                    t.shape(),
                    want.shape()
                )));
            }
            *want = t;
        }
        Ok(())
    }

    pub fn bit_eq(&self, other: &ParamSet) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|((a, x), (b, y))| a == b && x.bit_eq(y))
    }
}

fn he_normal(rng: &mut impl Rng, shape: &[usize], fan_in: usize, gain: f32) -> Tensor {
    let std = gain * (2.0 / fan_in as f32).sqrt();
    let mut t = rng::normal_tensor(rng, shape);
    t.data_mut().iter_mut().for_each(|v| *v *= std);
    t
}

/// Dense layer, `[n, in] -> [n, out]`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    pub fn new(ps: &mut ParamSet, name: &str, inp: usize, out: usize, rng: &mut impl Rng) -> Self {
        Self::with_gain(ps, name, inp, out, 1.0, rng)
    }

    pub fn with_gain(ps: &mut ParamSet, name: &str, inp: usize, out: usize, gain: f32, rng: &mut impl Rng) -> Self {
        let w = ps.add(format!("{name}.w"), he_normal(rng, &[inp, out], inp, gain));
        let b = ps.add(format!("{name}.b"), Tensor::zeros(vec![out]));
        Linear { w, b }
    }

    pub fn forward<S: Real>(&self, g: &mut Graph<S>, p: &Bound, x: Var) -> Result<Var> {
        g.affine(x, p[self.w], Some(p[self.b]))
    }

    pub fn bias_id(&self) -> ParamId {
        self.b
    }
}

/// Square-kernel convolution with bias.
#[derive(Debug, Clone, Copy)]
pub struct Conv {
    w: ParamId,
    b: ParamId,
    stride: usize,
    pad: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        rng: &mut impl Rng,
        gain: f32,
    ) -> Self {
        let w = ps.add(format!("{name}.w"), he_normal(rng, &[cout, cin, k, k], cin * k * k, gain));
        let b = ps.add(format!("{name}.b"), Tensor::zeros(vec![cout]));
        Conv { w, b, stride, pad: k / 2 }
    }

    pub fn forward<S: Real>(&self, g: &mut Graph<S>, p: &Bound, x: Var) -> Result<Var> {
        g.conv2d(x, p[self.w], Some(p[self.b]), self.stride, self.pad)
    }
}

/// Sinusoidal embedding of (possibly fractional) timesteps, `[n] -> [n, dim]`.
pub fn timestep_embedding(steps: &[f32], dim: usize) -> Tensor {
    let half = dim / 2;
    let mut out = Vec::with_capacity(steps.len() * dim);
    for &t in steps {
        for i in 0..half {
            let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
            out.push((t as f64 * freq).sin() as f32);
        }
        for i in 0..half {
            let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
            out.push((t as f64 * freq).cos() as f32);
        }
        out.extend(std::iter::repeat_n(0.0, dim - 2 * half));
    }
    Tensor::from_parts(vec![steps.len(), dim], out)
}

/// Row-wise one-hot rows for a flat `[n * width]` gather index.
pub fn label_index(labels: &[usize], width: usize) -> Vec<usize> {
    labels.iter().enumerate().map(|(i, &l)| i * width + l).collect()
}

/// Mean cross-entropy of `logits: [n, k]` against integer labels.
pub fn cross_entropy<S: Real>(g: &mut Graph<S>, logits: Var, labels: &[usize]) -> Result<Var> {
    let shape = g.shape(logits).to_vec();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(Error::arg(format!("logits {shape:?} for {} labels", labels.len())));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= shape[1]) {
        return Err(Error::arg(format!("label {bad} out of range for {} classes", shape[1])));
    }
    let lse = g.logsumexp(logits)?;
    let picked = g.gather(logits, label_index(labels, shape[1]), vec![labels.len()])?;
    let nll = g.sub(lse, picked)?;
    g.mean(nll)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    /// Global gradient-norm clip, if any.
    pub clip_norm: Option<f32>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: Some(1.0) }
    }
}

/// Adam with optional global-norm clipping.
pub struct Adam {
    cfg: AdamConfig,
    step: u32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, ps: &ParamSet) -> Self {
        let zeros: Vec<Vec<f32>> = ps.entries.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        Adam { cfg, step: 0, m: zeros.clone(), v: zeros }
    }

    /// Applies one update at learning rate `lr`, reading gradients for the
    /// bound parameters. Parameters without a gradient are left as-is.
    pub fn step(&mut self, ps: &mut ParamSet, bound: &Bound, grads: &Gradients<f32>, lr: f32) {
        self.step += 1;
        let gs: Vec<Option<Tensor>> = bound.0.iter().map(|&v| grads.get(v)).collect();
        let mut scale = 1.0f32;
        if let Some(clip) = self.cfg.clip_norm {
            let sq: f64 = gs.iter().flatten().flat_map(|t| t.data()).map(|&x| x as f64 * x as f64).sum();
            let norm = sq.sqrt() as f32;
            if norm > clip {
                scale = clip / norm;
            }
        }
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for (i, g) in gs.into_iter().enumerate() {
            let Some(g) = g else { continue };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let p = ps.entries[i].1.data_mut();
            for (((pj, &gj), mj), vj) in p.iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let gj = gj * scale;
                *mj = b1 * *mj + (1.0 - b1) * gj;
                *vj = b2 * *vj + (1.0 - b2) * gj * gj;
                *pj -= lr * (*mj / c1) / ((*vj / c2).sqrt() + self.cfg.eps);
            }
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }
}

/// Cosine decay from `base` to zero over `total` steps.
pub fn cosine_lr(base: f32, step: usize, total: usize) -> f32 {
    if total == 0 {
        return base;
    }
    let progress = step.min(total) as f64 / total as f64;
    (base as f64 * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())) as f32
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad::{finite_diff_grad, max_relative_error, value_and_grad};

    #[test]
    fn timestep_embedding_shape_and_origin() {
        let e = timestep_embedding(&[0.0, 10.0], 8);
        assert_eq!(e.shape(), &[2, 8]);
        assert_eq!(&e.row(0)[..4], &[0.0; 4]);
        assert_eq!(&e.row(0)[4..], &[1.0; 4]);
    }

    #[test]
    fn cross_entropy_of_uniform_logits() {
        let mut g = Graph::<f32>::new();
        let logits = g.constant(Tensor::zeros(vec![3, 8]));
        let l = cross_entropy(&mut g, logits, &[0, 3, 7]).unwrap();
        assert!((g.value(l).data()[0] - 8f32.ln()).abs() < 1e-6);
        assert!(cross_entropy(&mut g, logits, &[8, 0, 0]).is_err());
    }

    #[test]
    fn adam_descends_a_quadratic() {
        let mut ps = ParamSet::new();
        let id = ps.add("x", Tensor::new(vec![2], vec![3.0, -2.0]).unwrap());
        let mut opt = Adam::new(AdamConfig { lr: 0.1, clip_norm: None, ..Default::default() }, &ps);
        for _ in 0..200 {
            let mut g = Graph::<f32>::new();
            let b = ps.bind(&mut g, true);
            let sq = g.mul(b[id], b[id]).unwrap();
            let l = g.sum(sq).unwrap();
            let grads = g.backward(l).unwrap();
            opt.step(&mut ps, &b, &grads, 0.1);
        }
        assert!(ps.get(id).max_abs() < 0.05, "{:?}", ps.get(id));
    }

    #[test]
    fn cross_entropy_gradient_matches_fd() {
        let f = crate::diff_fn!(|g, x| {
            let l = g.reshape(x, vec![2, 4])?;
            cross_entropy(g, l, &[1, 2])
        });
        let x = Tensor::new(vec![8], vec![0.1, -0.5, 1.2, 0.3, 2.0, -1.0, 0.0, 0.7]).unwrap();
        let (_, a) = value_and_grad(&f, &x).unwrap();
        let n = finite_diff_grad(&f, &x, 1e-3).unwrap();
        assert!(max_relative_error(&a, &n) < 1e-3);
    }

    #[test]
    fn cosine_lr_endpoints() {
        assert_eq!(cosine_lr(1.0, 0, 10), 1.0);
        assert!(cosine_lr(1.0, 10, 10).abs() < 1e-7);
        assert!((cosine_lr(1.0, 5, 10) - 0.5).abs() < 1e-6);
    }
}
