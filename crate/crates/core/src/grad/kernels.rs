//! Dense kernels behind the graph primitives.

use super::Real;

/// `c = a · b + beta · c` on strided row/column layouts.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<S: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[S],
    rsa: usize,
    csa: usize,
    b: &[S],
    rsb: usize,
    csb: usize,
    beta: S,
    c: &mut [S],
    rsc: usize,
    csc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len(), "gemm: lhs out of bounds");
    assert!(k == 0 || (k - 1) * rsb + (n - 1) * csb < b.len(), "gemm: rhs out of bounds");
    assert!((m - 1) * rsc + (n - 1) * csc < c.len(), "gemm: output out of bounds");
    // SAFETY: the asserts above keep every strided access inside the slices.
    unsafe { S::gemm_raw(m, k, n, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), rsc, csc) }
}

/// Per-column sums of a row-major `[rows, cols]` matrix, accumulated in f64.
pub(crate) fn column_sums<S: Real>(g: &[S], rows: usize, cols: usize) -> Vec<S> {
    let mut acc = vec![0.0f64; cols];
    for r in 0..rows {
        for (a, &v) in acc.iter_mut().zip(&g[r * cols..(r + 1) * cols]) {
            *a += v.to_f64();
        }
    }
    acc.into_iter().map(S::from_f64).collect()
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new(
        batch: usize,
        cin: usize,
        h: usize,
        w: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Option<Self> {
        if h + 2 * pad < k || w + 2 * pad < k {
            return None;
        }
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        Some(ConvGeom { batch, cin, h, w, cout, k, stride, pad, ho, wo })
    }

    pub(crate) fn out_shape(&self) -> Vec<usize> {
        vec![self.batch, self.cout, self.ho, self.wo]
    }

    fn patch(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.batch * self.ho * self.wo
    }

    /// Unrolls input patches into `[cin*k*k, batch*ho*wo]`.
    fn im2col<S: Real>(&self, x: &[S]) -> Vec<S> {
        let (hw_out, ncols) = (self.ho * self.wo, self.cols());
        let mut cols = vec![S::ZERO; self.patch() * ncols];
        for ci in 0..self.cin {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let r = (ci * self.k + ky) * self.k + kx;
                    let row = &mut cols[r * ncols..(r + 1) * ncols];
                    for b in 0..self.batch {
                        let plane = &x[(b * self.cin + ci) * self.h * self.w..][..self.h * self.w];
                        let dst = &mut row[b * hw_out..(b + 1) * hw_out];
                        for oy in 0..self.ho {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            if iy < 0 || iy >= self.h as isize {
                                continue;
                            }
                            let src = &plane[iy as usize * self.w..][..self.w];
                            for ox in 0..self.wo {
                                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                if ix >= 0 && ix < self.w as isize {
                                    dst[oy * self.wo + ox] = src[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    /// Scatter-adds unrolled patch gradients back onto the input layout.
    fn col2im<S: Real>(&self, cols: &[S]) -> Vec<S> {
        let (hw_out, ncols) = (self.ho * self.wo, self.cols());
        let mut dx = vec![S::ZERO; self.batch * self.cin * self.h * self.w];
        for ci in 0..self.cin {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let r = (ci * self.k + ky) * self.k + kx;
                    let row = &cols[r * ncols..(r + 1) * ncols];
                    for b in 0..self.batch {
                        let plane = &mut dx[(b * self.cin + ci) * self.h * self.w..][..self.h * self.w];
                        let src = &row[b * hw_out..(b + 1) * hw_out];
                        for oy in 0..self.ho {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            if iy < 0 || iy >= self.h as isize {
                                continue;
                            }
                            let dst = &mut plane[iy as usize * self.w..][..self.w];
                            for ox in 0..self.wo {
                                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                if ix >= 0 && ix < self.w as isize {
                                    dst[ix as usize] += src[oy * self.wo + ox];
                                }
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}

pub(crate) fn conv_forward<S: Real>(geo: &ConvGeom, x: &[S], w: &[S], bias: Option<&[S]>) -> Vec<S> {
    let cols = geo.im2col(x);
    let (patch, ncols, hw_out) = (geo.patch(), geo.cols(), geo.ho * geo.wo);
    let mut flat = vec![S::ZERO; geo.cout * ncols];
    gemm(geo.cout, patch, ncols, w, patch, 1, &cols, ncols, 1, S::ZERO, &mut flat, ncols, 1);
    // [cout, batch*hw] -> [batch, cout, hw]
    let mut out = vec![S::ZERO; flat.len()];
    for o in 0..geo.cout {
        let bo = bias.map_or(S::ZERO, |b| b[o]);
        for b in 0..geo.batch {
            let src = &flat[o * ncols + b * hw_out..][..hw_out];
            let dst = &mut out[(b * geo.cout + o) * hw_out..][..hw_out];
            for (d, s) in dst.iter_mut().zip(src) {
                *d = *s + bo;
            }
        }
    }
    out
}

pub(crate) struct ConvGrads<S> {
    pub dx: Option<Vec<S>>,
    pub dw: Option<Vec<S>>,
    pub db: Option<Vec<S>>,
}

pub(crate) fn conv_backward<S: Real>(
    geo: &ConvGeom,
    x: &[S],
    w: &[S],
    dy: &[S],
    want_dx: bool,
    want_dw: bool,
    want_db: bool,
) -> ConvGrads<S> {
    let (patch, ncols, hw_out) = (geo.patch(), geo.cols(), geo.ho * geo.wo);
    // [batch, cout, hw] -> [cout, batch*hw]
    let mut dyp = vec![S::ZERO; dy.len()];
    for b in 0..geo.batch {
        for o in 0..geo.cout {
            let src = &dy[(b * geo.cout + o) * hw_out..][..hw_out];
            dyp[o * ncols + b * hw_out..][..hw_out].copy_from_slice(src);
        }
    }
    let db = want_db.then(|| {
        dyp.chunks_exact(ncols).map(|row| S::from_f64(row.iter().map(|&v| v.to_f64()).sum::<f64>())).collect()
    });
    let dw = want_dw.then(|| {
        let cols = geo.im2col(x);
        let mut dw = vec![S::ZERO; geo.cout * patch];
        gemm(geo.cout, ncols, patch, &dyp, ncols, 1, &cols, 1, ncols, S::ZERO, &mut dw, patch, 1);
        dw
    });
    let dx = want_dx.then(|| {
        let mut dcols = vec![S::ZERO; patch * ncols];
        gemm(patch, geo.cout, ncols, w, 1, patch, &dyp, ncols, 1, S::ZERO, &mut dcols, ncols, 1);
        geo.col2im(&dcols)
    });
    ConvGrads { dx, dw, db }
}
