use super::{Graph, Real, Var};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// A scalar-valued function built from graph primitives, evaluable at any
/// [`Real`] precision.
///
/// See [`diff_fn!`](crate::diff_fn) for a closure-like shorthand.
pub trait DiffFunction {
    fn eval<S: Real>(&self, g: &mut Graph<S>, x: Var) -> Result<Var>;
}

/// Defines an anonymous [`DiffFunction`]. Captured values are listed with
/// their types and are visible by reference inside the body.
///
/// ```
/// use conceptdiff::{diff_fn, grad::value_and_grad, Tensor};
/// let f = diff_fn!(|g, x| {
///     let sq = g.mul(x, x)?;
///     g.sum(sq)
/// });
/// let (v, grad) = value_and_grad(&f, &Tensor::from_vec(vec![1.0, 2.0]).unwrap()).unwrap();
/// assert_eq!(v, 5.0);
/// assert_eq!(grad.data(), &[2.0, 4.0]);
/// ```
#[macro_export]
macro_rules! diff_fn {
    ([$($cap:ident : $ty:ty),* $(,)?] |$g:ident, $x:ident| $body:block) => {{
        struct DiffFn { $($cap: $ty),* }
        impl $crate::grad::DiffFunction for DiffFn {
            #[allow(unused_variables)]
            fn eval<S: $crate::grad::Real>(
                &self,
                $g: &mut $crate::grad::Graph<S>,
                $x: $crate::grad::Var,
            ) -> $crate::Result<$crate::grad::Var> {
                $(let $cap = &self.$cap;)*
                $body
            }
        }
        DiffFn { $($cap: $cap.clone()),* }
    }};
    (|$g:ident, $x:ident| $body:block) => {
        $crate::diff_fn!([] |$g, $x| $body)
    };
}

fn scalar_output<S: Real>(g: &Graph<S>, out: Var) -> Result<S> {
    let v = g.data(out);
    if v.len() != 1 {
        return Err(Error::Contract(format!("function must be scalar-valued, got shape {:?}", g.shape(out))));
    }
    Ok(v[0])
}

/// `f(x)` on the production `f32` path.
pub fn evaluate<F: DiffFunction + ?Sized>(f: &F, x: &Tensor) -> Result<f32> {
    let mut g = Graph::<f32>::new();
    let xv = g.constant(x.clone());
    let out = f.eval(&mut g, xv)?;
    scalar_output(&g, out)
}

/// Returns `f(x)` and `∂f/∂x`.
pub fn value_and_grad<F: DiffFunction + ?Sized>(f: &F, x: &Tensor) -> Result<(f32, Tensor)> {
    let mut g = Graph::<f32>::new();
    let xv = g.input(x.clone());
    let out = f.eval(&mut g, xv)?;
    let value = scalar_output(&g, out)?;
    let grads = g.backward(out)?;
    Ok((value, grads.get_or_zeros(xv)))
}

/// Central-difference gradient `(f(x+h·eᵢ) − f(x−h·eᵢ)) / 2h`, one coordinate
/// at a time, with `f` evaluated in `f64`.
pub fn finite_diff_grad<F: DiffFunction + ?Sized>(f: &F, x: &Tensor, h: f32) -> Result<Tensor> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::arg(format!("finite-difference step must be positive, got {h}")));
    }
    let h = h as f64;
    let base: Vec<f64> = x.data().iter().map(|&v| v as f64).collect();
    let eval_at = |probe: Vec<f64>| -> Result<f64> {
        let mut g = Graph::<f64>::new();
        let xv = g.raw_leaf(x.shape().to_vec(), probe, false)?;
        let out = f.eval(&mut g, xv)?;
        scalar_output(&g, out)
    };
    let mut out = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let mut hi = base.clone();
        hi[i] += h;
        let mut lo = base.clone();
        lo[i] -= h;
        out.push(((eval_at(hi)? - eval_at(lo)?) / (2.0 * h)) as f32);
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Largest coordinate discrepancy between two gradients, relative to the
/// larger of their peak magnitudes.
///
/// Two all-zero gradients compare as exactly 0.
pub fn max_relative_error(a: &Tensor, b: &Tensor) -> f32 {
    assert_eq!(a.shape(), b.shape(), "gradient shapes differ");
    let scale = a.max_abs().max(b.max_abs()) as f64;
    if scale == 0.0 {
        return 0.0;
    }
    let worst = a.data().iter().zip(b.data()).map(|(&p, &q)| (p as f64 - q as f64).abs()).fold(0.0, f64::max);
    (worst / scale) as f32
}

/// A small network touching every primitive, differentiated w.r.t. its input.
fn every_primitive<S: Real>(g: &mut Graph<S>, x: Var) -> Result<Var> {
    let mut r = rng::stream(5, &[]);
    let w1 = g.constant(rng::normal_tensor(&mut r, &[3, 2, 3, 3]).map(|v| v * 0.4)?);
    let b1 = g.constant(rng::normal_tensor(&mut r, &[3]));
    let cb = g.constant(rng::normal_tensor(&mut r, &[1, 3]));
    let w2 = g.constant(rng::normal_tensor(&mut r, &[3, 3, 3, 3]).map(|v| v * 0.3)?);
    let dense = g.constant(rng::normal_tensor(&mut r, &[12, 4]).map(|v| v * 0.3)?);
    let anchors = g.constant(rng::normal_tensor(&mut r, &[4, 5]));
    let img = g.reshape(x, vec![1, 2, 4, 4])?;
    let h = g.conv2d(img, w1, Some(b1), 2, 1)?; // [1,3,2,2]
    let h = g.channel_bias(h, cb)?;
    let h = g.tanh(h)?;
    let up = g.upsample2x(h)?; // [1,3,4,4]
    let h2 = g.conv2d(up, w2, None, 2, 1)?; // [1,3,2,2]
    let h2 = g.relu(h2)?;
    let flat = g.reshape(h2, vec![1, 12])?;
    let z = g.affine(flat, dense, None)?; // [1,4]
    let z = g.l2_normalize(z)?;
    let scores = g.matmul(z, anchors)?; // [1,5]
    let back = g.matmul_t(scores, anchors)?; // [1,4]
    let back = g.tanh(back)?;
    let bz = g.dot(back, z)?;
    let scores = g.scale(scores, 3.0)?;
    let lse = g.logsumexp(scores)?;
    let picked = g.gather(scores, vec![0], vec![1])?;
    let ce = g.sub(lse, picked)?;
    let pooled = g.spatial_mean(h)?; // [1,3]
    let pm = g.mean(pooled)?;
    let d = g.dot(ce, pm)?;
    let total = g.add(d, ce)?;
    let total = g.add(total, bz)?;
    g.sum(total)
}

/// [`DiffFunction`] wrapper around the every-primitive network; inputs have
/// 32 elements.
pub struct EveryPrimitive;

impl DiffFunction for EveryPrimitive {
    fn eval<S: Real>(&self, g: &mut Graph<S>, x: Var) -> Result<Var> {
        every_primitive(g, x)
    }
}

/// Central-difference step for the oracles. Evaluation runs in `f64`, so the
/// step can be small enough to rarely straddle a ReLU kink.
pub const FD_STEP: f32 = 1e-7;

/// Reverse-mode versus finite-difference error at `trials` random inputs of
/// [`EveryPrimitive`]; returns the worst case.
pub fn oracle_suite(trials: usize, seed: u64) -> Result<f32> {
    let mut r = rng::stream(seed, &[]);
    let mut worst = 0.0f32;
    for _ in 0..trials {
        let x = rng::uniform_tensor(&mut r, &[32], -2.0, 2.0);
        let (_, analytic) = value_and_grad(&EveryPrimitive, &x)?;
        let numeric = finite_diff_grad(&EveryPrimitive, &x, FD_STEP)?;
        worst = worst.max(max_relative_error(&analytic, &numeric));
    }
    Ok(worst)
}
