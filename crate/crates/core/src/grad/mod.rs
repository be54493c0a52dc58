//! Reverse-mode differentiation over dense tensors.
//!
//! A [`Graph`] is a single-use tape: every operation evaluates eagerly and
//! appends a node, and [`Graph::backward`] walks the nodes in reverse.
//! The primitive set is closed: affine maps (dense and 2-D convolution),
//! ReLU/tanh, sums and means, explicit-axis bias and upsampling, L2
//! normalisation, dot products, row-wise log-sum-exp, gather and reshape.
//! Shapes never broadcast implicitly.
//!
//! Models run on `Graph<f32>`. The same code instantiated as `Graph<f64>`
//! serves as the high-precision evaluator behind [`finite_diff_grad`].

mod check;
mod kernels;
mod real;

pub use check::{
    evaluate, finite_diff_grad, max_relative_error, oracle_suite, value_and_grad, DiffFunction, EveryPrimitive, FD_STEP,
};
pub use real::Real;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Affine { x: Var, w: Var, b: Option<Var> },
    MatmulT(Var, Var),
    Conv2d { x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize },
    ChannelBias { x: Var, b: Var },
    Upsample2x(Var),
    SpatialMean(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    Sum(Var),
    Mean(Var),
    L2Normalize { x: Var, norms: Vec<f64> },
    Dot(Var, Var),
    LogSumExp(Var),
    Gather { x: Var, index: Vec<usize> },
    Reshape(Var),
}

struct Node<S> {
    shape: Vec<usize>,
    data: Vec<S>,
    op: Op,
    requires_grad: bool,
}

/// The evaluation tape.
pub struct Graph<S: Real = f32> {
    nodes: Vec<Node<S>>,
}

impl<S: Real> Default for Graph<S> {
    fn default() -> Self {
        Graph { nodes: Vec::new() }
    }
}

/// Gradients of a scalar with respect to every node that required them.
pub struct Gradients<S: Real = f32> {
    grads: Vec<Option<Vec<S>>>,
    shapes: Vec<Vec<usize>>,
}

impl<S: Real> Gradients<S> {
    /// Gradient for `v`, or `None` if `v` does not influence the output or
    /// was added as a constant.
    pub fn get(&self, v: Var) -> Option<Tensor> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor::from_parts(self.shapes[v.0].clone(), g.iter().map(|x| x.to_f32()).collect()))
    }

    /// Like [`Gradients::get`], but an absent gradient becomes zeros.
    pub fn get_or_zeros(&self, v: Var) -> Tensor {
        self.get(v).unwrap_or_else(|| Tensor::zeros(self.shapes[v.0].clone()))
    }

    pub fn raw(&self, v: Var) -> Option<&[S]> {
        self.grads.get(v.0)?.as_deref()
    }
}

fn finite<S: Real>(data: &[S], what: &str) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(what.to_string()))
    }
}

fn shape_err(what: &str, detail: String) -> Error {
    Error::Argument(format!("{what}: {detail}"))
}

fn sum_f64<S: Real>(xs: &[S]) -> f64 {
    xs.iter().map(|v| v.to_f64()).sum()
}

impl<S: Real> Graph<S> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<S>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { shape, data, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn emit(&mut self, shape: Vec<usize>, data: Vec<S>, op: Op, inputs: &[Var], what: &str) -> Result<Var> {
        finite(&data, what)?;
        let requires_grad = inputs.iter().any(|&v| self.rg(v));
        Ok(self.push(shape, data, op, requires_grad))
    }

    fn leaf(&mut self, t: &Tensor, requires_grad: bool) -> Var {
        let data = t.data().iter().map(|&v| S::from_f32(v)).collect();
        self.push(t.shape().to_vec(), data, Op::Leaf, requires_grad)
    }

    /// A differentiable leaf.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.leaf(&t, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(&t, false)
    }

    /// A leaf given directly in the graph's element type.
    pub fn raw_leaf(&mut self, shape: Vec<usize>, data: Vec<S>, requires_grad: bool) -> Result<Var> {
        if shape.is_empty() || shape.contains(&0) || shape.iter().product::<usize>() != data.len() {
            return Err(shape_err("leaf", format!("{} values for {shape:?}", data.len())));
        }
        finite(&data, "leaf")?;
        Ok(self.push(shape, data, Op::Leaf, requires_grad))
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn data(&self, v: Var) -> &[S] {
        &self.nodes[v.0].data
    }

    /// The node value rounded to an `f32` tensor.
    pub fn value(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::from_parts(n.shape.clone(), n.data.iter().map(|x| x.to_f32()).collect())
    }

    /// `x · w + b` with `x: [n, k]`, `w: [k, m]`, `b: [m]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
            return Err(shape_err("affine", format!("{xs:?} x {ws:?}")));
        }
        let (n, k, m) = (xs[0], xs[1], ws[1]);
        if let Some(b) = b {
            if self.shape(b) != [m] {
                return Err(shape_err("affine bias", format!("{:?} for width {m}", self.shape(b))));
            }
        }
        let mut out = vec![S::ZERO; n * m];
        if let Some(b) = b {
            let bias = self.data(b);
            for row in out.chunks_exact_mut(m) {
                row.copy_from_slice(bias);
            }
        }
        let beta = if b.is_some() { S::ONE } else { S::ZERO };
        kernels::gemm(n, k, m, self.data(x), k, 1, self.data(w), m, 1, beta, &mut out, m, 1);
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        self.emit(vec![n, m], out, Op::Affine { x, w, b }, &inputs, "affine")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.affine(a, b, None)
    }

    /// `a · bᵀ` with `a: [n, k]`, `b: [m, k]`; row-pair dot products.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (as_, bs) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if as_.len() != 2 || bs.len() != 2 || as_[1] != bs[1] {
            return Err(shape_err("matmul_t", format!("{as_:?} x {bs:?}^T")));
        }
        let (n, k, m) = (as_[0], as_[1], bs[0]);
        let mut out = vec![S::ZERO; n * m];
        kernels::gemm(n, k, m, self.data(a), k, 1, self.data(b), 1, k, S::ZERO, &mut out, m, 1);
        self.emit(vec![n, m], out, Op::MatmulT(a, b), &[a, b], "matmul_t")
    }

    /// 2-D convolution. `x: [b, c, h, w]`, `w: [o, c, k, k]`, `bias: [o]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 4 || ws.len() != 4 || ws[1] != xs[1] || ws[2] != ws[3] || stride == 0 {
            return Err(shape_err("conv2d", format!("input {xs:?}, kernel {ws:?}, stride {stride}")));
        }
        if ws[2] > 5 {
            return Err(shape_err("conv2d", format!("kernel {} exceeds 5x5", ws[2])));
        }
        let geo = kernels::ConvGeom::new(xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], stride, pad)
            .ok_or_else(|| shape_err("conv2d", format!("kernel {} does not fit {xs:?}", ws[2])))?;
        if let Some(b) = b {
            if self.shape(b) != [ws[0]] {
                return Err(shape_err("conv2d bias", format!("{:?}", self.shape(b))));
            }
        }
        let bias = b.map(|b| self.data(b));
        let out = kernels::conv_forward(&geo, self.data(x), self.data(w), bias);
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        self.emit(geo.out_shape(), out, Op::Conv2d { x, w, b, stride, pad }, &inputs, "conv2d")
    }

    /// Adds a per-(sample, channel) offset: `x: [b, c, ...]`, `bias: [b, c]`.
    pub fn channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let bs = self.shape(bias).to_vec();
        if xs.len() < 3 || bs != xs[..2] {
            return Err(shape_err("channel_bias", format!("{xs:?} + {bs:?}")));
        }
        let plane: usize = xs[2..].iter().product();
        let mut out = self.data(x).to_vec();
        for (chunk, &o) in out.chunks_exact_mut(plane).zip(self.data(bias)) {
            chunk.iter_mut().for_each(|v| *v += o);
        }
        self.emit(xs, out, Op::ChannelBias { x, b: bias }, &[x, bias], "channel_bias")
    }

    /// Nearest-neighbour 2x upsampling of `[b, c, h, w]`.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return Err(shape_err("upsample2x", format!("{xs:?}")));
        }
        let (h, w) = (xs[2], xs[3]);
        let src = self.data(x);
        let mut out = vec![S::ZERO; src.len() * 4];
        for (plane, dst) in src.chunks_exact(h * w).zip(out.chunks_exact_mut(4 * h * w)) {
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    dst[y * 2 * w + xx] = plane[(y / 2) * w + xx / 2];
                }
            }
        }
        self.emit(vec![xs[0], xs[1], 2 * h, 2 * w], out, Op::Upsample2x(x), &[x], "upsample2x")
    }

    /// Mean over all axes after the first two: `[b, c, ...] -> [b, c]`.
    pub fn spatial_mean(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 3 {
            return Err(shape_err("spatial_mean", format!("{xs:?}")));
        }
        let plane: usize = xs[2..].iter().product();
        let out = self.data(x).chunks_exact(plane).map(|c| S::from_f64(sum_f64(c) / plane as f64)).collect();
        self.emit(xs[..2].to_vec(), out, Op::SpatialMean(x), &[x], "spatial_mean")
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(what, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, what: &str, f: impl Fn(S, S) -> S) -> Result<Var> {
        self.same_shape(a, b, what)?;
        let out = self.data(a).iter().zip(self.data(b)).map(|(&p, &q)| f(p, q)).collect();
        let shape = self.shape(a).to_vec();
        self.emit(shape, out, op, &[a, b], what)
    }

    fn map(&mut self, a: Var, op: Op, what: &str, f: impl Fn(S) -> S) -> Result<Var> {
        let out = self.data(a).iter().map(|&v| f(v)).collect();
        let shape = self.shape(a).to_vec();
        self.emit(shape, out, op, &[a], what)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add(a, b), "add", |p, q| p + q)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub(a, b), "sub", |p, q| p - q)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Mul(a, b), "mul", |p, q| p * q)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let k = S::from_f64(s);
        self.map(a, Op::Scale(a, s), "scale", |v| v * k)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Relu(a), "relu", |v| if v > S::ZERO { v } else { S::ZERO })
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Tanh(a), "tanh", |v| v.tanh())
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = sum_f64(self.data(a));
        self.emit(vec![1], vec![S::from_f64(s)], Op::Sum(a), &[a], "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let d = self.data(a);
        let s = sum_f64(d) / d.len() as f64;
        self.emit(vec![1], vec![S::from_f64(s)], Op::Mean(a), &[a], "mean")
    }

    /// Normalises each row (last axis) to unit L2 norm.
    pub fn l2_normalize(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let width = *shape.last().expect("shape is non-empty");
        let mut out = self.data(a).to_vec();
        let mut norms = Vec::with_capacity(out.len() / width);
        for row in out.chunks_exact_mut(width) {
            let n = row.iter().map(|v| v.to_f64() * v.to_f64()).sum::<f64>().sqrt().max(1e-12);
            row.iter_mut().for_each(|v| *v = S::from_f64(v.to_f64() / n));
            norms.push(n);
        }
        self.emit(shape, out, Op::L2Normalize { x: a, norms }, &[a], "l2_normalize")
    }

    /// Inner product of two equally shaped tensors, as a `[1]` scalar.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "dot")?;
        let s: f64 = self.data(a).iter().zip(self.data(b)).map(|(p, q)| p.to_f64() * q.to_f64()).sum();
        self.emit(vec![1], vec![S::from_f64(s)], Op::Dot(a, b), &[a, b], "dot")
    }

    /// Row-wise `log Σ exp` over the last axis, computed max-shifted.
    pub fn logsumexp(&mut self, a: Var) -> Result<Var> {
        let width = *self.shape(a).last().expect("shape is non-empty");
        let out: Vec<S> = self.data(a).chunks_exact(width).map(|r| S::from_f64(lse_row(r))).collect();
        let rows = out.len();
        self.emit(vec![rows], out, Op::LogSumExp(a), &[a], "logsumexp")
    }

    /// Picks flat elements of `x` into a tensor of `shape`.
    pub fn gather(&mut self, x: Var, index: Vec<usize>, shape: Vec<usize>) -> Result<Var> {
        let n = self.data(x).len();
        if shape.is_empty() || shape.contains(&0) || shape.iter().product::<usize>() != index.len() {
            return Err(shape_err("gather", format!("{} indices into {shape:?}", index.len())));
        }
        if let Some(bad) = index.iter().find(|&&i| i >= n) {
            return Err(shape_err("gather", format!("index {bad} out of {n}")));
        }
        let src = self.data(x);
        let out = index.iter().map(|&i| src[i]).collect();
        self.emit(shape, out, Op::Gather { x, index }, &[x], "gather")
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        if shape.is_empty() || shape.contains(&0) || shape.iter().product::<usize>() != self.data(x).len() {
            return Err(shape_err("reshape", format!("{:?} to {shape:?}", self.shape(x))));
        }
        let data = self.data(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(shape, data, Op::Reshape(x), rg))
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        if self.data(loss).len() != 1 {
            return Err(Error::Contract(format!("backward needs a scalar output, got shape {:?}", self.shape(loss))));
        }
        let mut grads: Vec<Option<Vec<S>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![S::ONE]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                finite(g, &format!("gradient of node {i}"))?;
            }
        }
        let shapes = self.nodes.iter().map(|n| n.shape.clone()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn backprop_node(&self, node: &Node<S>, g: &[S], grads: &mut [Option<Vec<S>>]) {
        let mut acc = |v: Var, contrib: Vec<S>| {
            if !self.rg(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.iter_mut().zip(&contrib).for_each(|(e, &c)| *e += c),
                slot => *slot = Some(contrib),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Affine { x, w, b } => {
                let (xs, ws) = (self.shape(*x), self.shape(*w));
                let (n, k, m) = (xs[0], xs[1], ws[1]);
                if self.rg(*x) {
                    let mut dx = vec![S::ZERO; n * k];
                    kernels::gemm(n, m, k, g, m, 1, self.data(*w), 1, m, S::ZERO, &mut dx, k, 1);
                    acc(*x, dx);
                }
                if self.rg(*w) {
                    let mut dw = vec![S::ZERO; k * m];
                    kernels::gemm(k, n, m, self.data(*x), 1, k, g, m, 1, S::ZERO, &mut dw, m, 1);
                    acc(*w, dw);
                }
                if let Some(b) = b {
                    if self.rg(*b) {
                        acc(*b, kernels::column_sums(g, n, m));
                    }
                }
            }
            Op::MatmulT(a, b) => {
                let (n, k, m) = (self.shape(*a)[0], self.shape(*a)[1], self.shape(*b)[0]);
                if self.rg(*a) {
                    let mut da = vec![S::ZERO; n * k];
                    kernels::gemm(n, m, k, g, m, 1, self.data(*b), k, 1, S::ZERO, &mut da, k, 1);
                    acc(*a, da);
                }
                if self.rg(*b) {
                    let mut db = vec![S::ZERO; m * k];
                    kernels::gemm(m, n, k, g, 1, m, self.data(*a), k, 1, S::ZERO, &mut db, k, 1);
                    acc(*b, db);
                }
            }
            Op::Conv2d { x, w, b, stride, pad } => {
                let (xs, ws) = (self.shape(*x), self.shape(*w));
                let geo = kernels::ConvGeom::new(xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], *stride, *pad)
                    .expect("validated at forward time");
                let out = kernels::conv_backward(
                    &geo,
                    self.data(*x),
                    self.data(*w),
                    g,
                    self.rg(*x),
                    self.rg(*w),
                    b.is_some_and(|b| self.rg(b)),
                );
                if let Some(dx) = out.dx {
                    acc(*x, dx);
                }
                if let Some(dw) = out.dw {
                    acc(*w, dw);
                }
                if let (Some(b), Some(db)) = (b, out.db) {
                    acc(*b, db);
                }
            }
            Op::ChannelBias { x, b } => {
                let plane: usize = self.shape(*x)[2..].iter().product();
                if self.rg(*b) {
                    acc(*b, g.chunks_exact(plane).map(|c| S::from_f64(sum_f64(c))).collect());
                }
                acc(*x, g.to_vec());
            }
            Op::Upsample2x(x) => {
                let xs = self.shape(*x);
                let (h, w) = (xs[2], xs[3]);
                let mut dx = vec![S::ZERO; g.len() / 4];
                for (src, dst) in g.chunks_exact(4 * h * w).zip(dx.chunks_exact_mut(h * w)) {
                    for y in 0..h {
                        for xx in 0..w {
                            let r0 = 2 * y * 2 * w + 2 * xx;
                            let r1 = r0 + 2 * w;
                            dst[y * w + xx] = src[r0] + src[r0 + 1] + src[r1] + src[r1 + 1];
                        }
                    }
                }
                acc(*x, dx);
            }
            Op::SpatialMean(x) => {
                let plane: usize = self.shape(*x)[2..].iter().product();
                let inv = S::from_f64(1.0 / plane as f64);
                let mut dx = Vec::with_capacity(g.len() * plane);
                for &gv in g {
                    dx.extend(std::iter::repeat_n(gv * inv, plane));
                }
                acc(*x, dx);
            }
            Op::Add(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.iter().map(|&v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.data(*a), self.data(*b));
                acc(*a, g.iter().zip(bv).map(|(&gi, &bi)| gi * bi).collect());
                acc(*b, g.iter().zip(av).map(|(&gi, &ai)| gi * ai).collect());
            }
            Op::Scale(a, s) => {
                let k = S::from_f64(*s);
                acc(*a, g.iter().map(|&v| v * k).collect());
            }
            Op::Relu(a) => {
                let av = self.data(*a);
                acc(*a, g.iter().zip(av).map(|(&gi, &ai)| if ai > S::ZERO { gi } else { S::ZERO }).collect());
            }
            Op::Tanh(a) => {
                // sech² from the input keeps precision where tanh saturates.
                let av = self.data(*a);
                acc(
                    *a,
                    g.iter()
                        .zip(av)
                        .map(|(&gi, &ai)| {
                            let c = ai.to_f64().cosh();
                            gi * S::from_f64(1.0 / (c * c))
                        })
                        .collect(),
                );
            }
            Op::Sum(a) => acc(*a, vec![g[0]; self.data(*a).len()]),
            Op::Mean(a) => {
                let n = self.data(*a).len();
                acc(*a, vec![S::from_f64(g[0].to_f64() / n as f64); n]);
            }
            Op::L2Normalize { x, norms } => {
                let y = &node.data;
                let width = *node.shape.last().expect("non-empty");
                let mut dx = vec![S::ZERO; y.len()];
                for (((yr, gr), dr), &n) in
                    y.chunks_exact(width).zip(g.chunks_exact(width)).zip(dx.chunks_exact_mut(width)).zip(norms)
                {
                    let proj: f64 = yr.iter().zip(gr).map(|(a, b)| a.to_f64() * b.to_f64()).sum();
                    for ((d, yi), gi) in dr.iter_mut().zip(yr).zip(gr) {
                        *d = S::from_f64((gi.to_f64() - yi.to_f64() * proj) / n);
                    }
                }
                acc(*x, dx);
            }
            Op::Dot(a, b) => {
                let (av, bv) = (self.data(*a), self.data(*b));
                acc(*a, bv.iter().map(|&v| v * g[0]).collect());
                acc(*b, av.iter().map(|&v| v * g[0]).collect());
            }
            Op::LogSumExp(a) => {
                let av = self.data(*a);
                let width = *self.shape(*a).last().expect("non-empty");
                let mut dx = vec![S::ZERO; av.len()];
                for (((row, drow), l), &gi) in
                    av.chunks_exact(width).zip(dx.chunks_exact_mut(width)).zip(&node.data).zip(g)
                {
                    for (d, v) in drow.iter_mut().zip(row) {
                        *d = gi * S::from_f64((v.to_f64() - l.to_f64()).exp());
                    }
                }
                acc(*a, dx);
            }
            Op::Gather { x, index } => {
                let mut dx = vec![S::ZERO; self.data(*x).len()];
                for (&i, &gi) in index.iter().zip(g) {
                    dx[i] += gi;
                }
                acc(*x, dx);
            }
            Op::Reshape(x) => acc(*x, g.to_vec()),
        }
    }
}

fn lse_row<S: Real>(row: &[S]) -> f64 {
    let m = row.iter().fold(f64::NEG_INFINITY, |a, b| a.max(b.to_f64()));
    let s: f64 = row.iter().map(|v| (v.to_f64() - m).exp()).sum();
    m + s.ln()
}
