//! Differentiable primitives recorded on a [`Tape`].
//!
//! Shape errors in these primitives are programming errors and panic, like
//! indexing out of bounds would.

use std::rc::Rc;

use super::{Tape, Tensor, Var};
use crate::mesh::{bilinear_sample_with_grad, FeatureMap};

/// Norm products below this are treated as zero vectors.
pub const NORM_EPS: f64 = 1e-12;

/// `c = a·b` (+ `beta·c`) for row-major operands given by strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: slice lengths checked above cover every strided access
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn same_shape(a: &Tensor, b: &Tensor, op: &str) {
    assert_eq!(a.shape(), b.shape(), "{op}: shape mismatch");
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_shape(t.shape(), t.data().iter().map(|&x| f(x)).collect())
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::from_shape(a.shape(), a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect())
}

impl<'t> Var<'t> {
    pub fn add(self, other: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        same_shape(&a, &b, "add");
        let out = zip(&a, &b, |x, y| x + y);
        self.tape().custom(&[self, other], out, |g, _, _| vec![g.clone(), g.clone()])
    }

    pub fn sub(self, other: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        same_shape(&a, &b, "sub");
        let out = zip(&a, &b, |x, y| x - y);
        self.tape().custom(&[self, other], out, |g, _, _| vec![g.clone(), map(g, |x| -x)])
    }

    /// Elementwise product.
    pub fn mul(self, other: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        same_shape(&a, &b, "mul");
        let out = zip(&a, &b, |x, y| x * y);
        self.tape().custom(&[self, other], out, |g, inp, _| {
            vec![zip(g, inp[1], |gi, y| gi * y), zip(g, inp[0], |gi, x| gi * x)]
        })
    }

    pub fn scale(self, s: f64) -> Var<'t> {
        let out = map(&self.value(), |x| x * s);
        self.tape().custom(&[self], out, move |g, _, _| vec![map(g, |x| x * s)])
    }

    /// Adds a constant tensor of the same shape.
    pub fn add_const(self, c: &Tensor) -> Var<'t> {
        let a = self.value();
        same_shape(&a, c, "add_const");
        let out = zip(&a, c, |x, y| x + y);
        self.tape().custom(&[self], out, |g, _, _| vec![g.clone()])
    }

    /// `(m×k)·(k×n)` matrix product.
    pub fn matmul(self, other: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        assert!(a.shape().len() == 2 && b.shape().len() == 2, "matmul expects 2-D operands");
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        assert_eq!(k, b.shape()[0], "matmul: inner dimensions differ");
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, a.data(), (k, 1), b.data(), (n, 1), 0.0, &mut out);
        self.tape().custom(&[self, other], Tensor::from_shape(&[m, n], out), move |g, inp, _| {
            let (a, b) = (inp[0].data(), inp[1].data());
            let mut ga = vec![0.0; m * k];
            gemm(m, n, k, g.data(), (n, 1), b, (1, n), 0.0, &mut ga);
            let mut gb = vec![0.0; k * n];
            gemm(k, m, n, a, (1, k), g.data(), (n, 1), 0.0, &mut gb);
            vec![Tensor::from_shape(&[m, k], ga), Tensor::from_shape(&[k, n], gb)]
        })
    }

    /// Adds a length-`n` row vector to every row of an `m×n` matrix.
    pub fn add_row(self, row: Var<'t>) -> Var<'t> {
        let (a, r) = (self.value(), row.value());
        let n = r.len();
        assert_eq!(a.last_dim(), n, "add_row: width mismatch");
        let mut out = a.data().to_vec();
        for chunk in out.chunks_mut(n) {
            for (x, b) in chunk.iter_mut().zip(r.data()) {
                *x += b;
            }
        }
        let shape = a.shape().to_vec();
        let rshape = r.shape().to_vec();
        self.tape().custom(&[self, row], Tensor::from_shape(&shape, out), move |g, _, _| {
            let mut gr = vec![0.0; n];
            for chunk in g.data().chunks(n) {
                for (acc, x) in gr.iter_mut().zip(chunk) {
                    *acc += x;
                }
            }
            vec![g.clone(), Tensor::from_shape(&rshape, gr)]
        })
    }

    pub fn tanh(self) -> Var<'t> {
        let out = map(&self.value(), f64::tanh);
        self.tape().custom(&[self], out, |g, _, y| vec![zip(g, y, |gi, yi| gi * (1.0 - yi * yi))])
    }

    /// Elementwise absolute value; the subgradient at 0 is 0.
    pub fn abs(self) -> Var<'t> {
        let out = map(&self.value(), f64::abs);
        self.tape().custom(&[self], out, |g, inp, _| vec![zip(g, inp[0], |gi, x| gi * sign(x))])
    }

    pub fn sum(self) -> Var<'t> {
        let a = self.value();
        let shape = a.shape().to_vec();
        let out = Tensor::scalar(a.data().iter().sum());
        self.tape().custom(&[self], out, move |g, _, _| vec![Tensor::full(&shape, g.item())])
    }

    pub fn mean(self) -> Var<'t> {
        let n = self.value().len() as f64;
        self.sum().scale(1.0 / n)
    }

    /// L1 norm of all entries.
    pub fn l1(self) -> Var<'t> {
        self.abs().sum()
    }

    pub fn dot(self, other: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        same_shape(&a, &b, "dot");
        let out = Tensor::scalar(a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum());
        self.tape().custom(&[self, other], out, |g, inp, _| {
            let s = g.item();
            vec![map(inp[1], |y| s * y), map(inp[0], |x| s * x)]
        })
    }

    /// Euclidean (Frobenius) norm of all entries; gradient at 0 is 0.
    pub fn norm(self) -> Var<'t> {
        let a = self.value();
        let n = a.data().iter().map(|x| x * x).sum::<f64>().sqrt();
        self.tape().custom(&[self], Tensor::scalar(n), |g, inp, out| {
            let n = out.item();
            let s = if n > 0.0 { g.item() / n } else { 0.0 };
            vec![map(inp[0], |x| s * x)]
        })
    }

    /// Normalizes along the last axis.
    pub fn normalize(self) -> Var<'t> {
        let a = self.value();
        let d = a.last_dim();
        let mut out = a.data().to_vec();
        for row in out.chunks_mut(d) {
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt().max(NORM_EPS);
            row.iter_mut().for_each(|x| *x /= n);
        }
        let out = Tensor::from_shape(a.shape(), out);
        self.tape().custom(&[self], out, move |g, inp, y| {
            let mut gx = vec![0.0; g.len()];
            for ((gr, yr), (xr, o)) in g.data().chunks(d).zip(y.data().chunks(d)).zip(inp[0].data().chunks(d).zip(gx.chunks_mut(d))) {
                let n = xr.iter().map(|x| x * x).sum::<f64>().sqrt().max(NORM_EPS);
                let yg: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for k in 0..d {
                    o[k] = (gr[k] - yr[k] * yg) / n;
                }
            }
            vec![Tensor::from_shape(g.shape(), gx)]
        })
    }

    /// Cosine similarity along the last axis; the result drops that axis.
    /// Pairs whose norm product is below [`NORM_EPS`] score 0.
    pub fn cosine(self, other: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        same_shape(&a, &b, "cosine");
        let d = a.last_dim();
        let out_shape = a.shape()[..a.shape().len().saturating_sub(1)].to_vec();
        let out: Vec<f64> = a.data().chunks(d).zip(b.data().chunks(d)).map(|(x, y)| cosine(x, y)).collect();
        self.tape().custom(&[self, other], Tensor::from_shape(&out_shape, out), move |g, inp, _| {
            let mut ga = vec![0.0; inp[0].len()];
            let mut gb = vec![0.0; inp[1].len()];
            for (r, gi) in g.data().iter().enumerate() {
                let o = r * d;
                cosine_vjp(&inp[0].data()[o..o + d], &inp[1].data()[o..o + d], *gi, &mut ga[o..o + d], &mut gb[o..o + d]);
            }
            vec![Tensor::from_shape(inp[0].shape(), ga), Tensor::from_shape(inp[1].shape(), gb)]
        })
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'t> {
        let a = self.value();
        let old = a.shape().to_vec();
        let out = a.as_ref().clone().reshaped(shape);
        self.tape().custom(&[self], out, move |g, _, _| vec![g.clone().reshaped(&old)])
    }

    /// Rows `start..start+count` along the first axis.
    pub fn rows(self, start: usize, count: usize) -> Var<'t> {
        let a = self.value();
        let n = a.shape()[0];
        assert!(start + count <= n, "rows: range out of bounds");
        let stride = a.len() / n.max(1);
        let mut shape = a.shape().to_vec();
        shape[0] = count;
        let out = Tensor::from_shape(&shape, a.data()[start * stride..(start + count) * stride].to_vec());
        let full = a.shape().to_vec();
        self.tape().custom(&[self], out, move |g, _, _| {
            let mut gx = Tensor::zeros(&full);
            gx.data_mut()[start * stride..(start + count) * stride].copy_from_slice(g.data());
            vec![gx]
        })
    }
}

#[inline]
pub(crate) fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[inline]
pub(crate) fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    let den = (aa * bb).sqrt();
    if den < NORM_EPS {
        0.0
    } else {
        ab / den
    }
}

/// Accumulates `g·∂cos/∂a` into `ga` and `g·∂cos/∂b` into `gb`.
#[inline]
pub(crate) fn cosine_vjp(a: &[f64], b: &[f64], g: f64, ga: &mut [f64], gb: &mut [f64]) {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    let den = (aa * bb).sqrt();
    if den < NORM_EPS {
        return;
    }
    let c = ab / den;
    let s = g / den;
    let ca = g * c / aa;
    let cb = g * c / bb;
    for k in 0..a.len() {
        ga[k] += s * b[k] - ca * a[k];
        gb[k] += s * a[k] - cb * b[k];
    }
}

/// Samples a constant map at a differentiable 2-D location `(x, y)`.
pub fn bilinear_sample<'t>(map: Rc<FeatureMap>, loc: Var<'t>) -> Var<'t> {
    let l = loc.value();
    assert_eq!(l.len(), 2, "bilinear_sample expects a 2-vector location");
    let d = map.channels;
    let mut out = vec![0.0; d];
    let mut dx = vec![0.0; d];
    let mut dy = vec![0.0; d];
    bilinear_sample_with_grad(&map.data, map.height, map.width, d, l.data()[0], l.data()[1], &mut out, &mut dx, &mut dy);
    loc.tape().custom(&[loc], Tensor::vector(out), move |g, _, _| {
        let gx: f64 = g.data().iter().zip(&dx).map(|(a, b)| a * b).sum();
        let gy: f64 = g.data().iter().zip(&dy).map(|(a, b)| a * b).sum();
        vec![Tensor::vector(vec![gx, gy])]
    })
}

/// `Σ_k w_k · f_k` for three weights and a 3×D feature matrix.
pub fn barycentric_interp<'t>(weights: Var<'t>, features: Var<'t>) -> Var<'t> {
    let (w, f) = (weights.value(), features.value());
    assert_eq!(w.len(), 3, "barycentric weights must have 3 entries");
    assert_eq!(f.shape().first(), Some(&3), "features must be 3×D");
    let d = f.len() / 3;
    let out: Vec<f64> = (0..d).map(|c| (0..3).map(|k| w.data()[k] * f.data()[k * d + c]).sum()).collect();
    let tape: &Tape = weights.tape();
    tape.custom(&[weights, features], Tensor::vector(out), move |g, inp, _| {
        let (w, f) = (inp[0].data(), inp[1].data());
        let gw: Vec<f64> = (0..3).map(|k| (0..d).map(|c| g.data()[c] * f[k * d + c]).sum()).collect();
        let gf: Vec<f64> = (0..3 * d).map(|i| w[i / d] * g.data()[i % d]).collect();
        vec![Tensor::from_shape(inp[0].shape(), gw), Tensor::from_shape(inp[1].shape(), gf)]
    })
}
