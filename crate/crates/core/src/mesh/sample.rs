/// A dense H×W×D map stored row-major, channel-last.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), height * width * channels, "feature map data length");
        Self { height, width, channels, data }
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::new(height, width, channels, vec![0.0; height * width * channels])
    }

    pub fn texel(&self, row: usize, col: usize) -> &[f64] {
        let o = (row * self.width + col) * self.channels;
        &self.data[o..o + self.channels]
    }

    pub fn sample(&self, x: f64, y: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.channels];
        bilinear_sample(&self.data, self.height, self.width, self.channels, x, y, &mut out);
        out
    }
}

struct Stencil {
    i0: usize,
    i1: usize,
    j0: usize,
    j1: usize,
    ty: f64,
    tx: f64,
    // zero when the coordinate was clamped
    dx_live: f64,
    dy_live: f64,
}

#[inline]
fn axis(v: f64, n: usize) -> (usize, usize, f64, f64) {
    let hi = (n - 1) as f64;
    if n == 1 {
        return (0, 0, 0.0, 0.0);
    }
    // NaN falls through to the clamp branch
    if !(v > 0.0) {
        return (0, 1, 0.0, 0.0);
    }
    if v >= hi {
        return (n - 2, n - 1, 1.0, 0.0);
    }
    let lo = (v.floor() as usize).min(n - 2);
    (lo, lo + 1, v - lo as f64, 1.0)
}

#[inline]
fn stencil(h: usize, w: usize, x: f64, y: f64) -> Stencil {
    let (j0, j1, tx, dx_live) = axis(x, w);
    let (i0, i1, ty, dy_live) = axis(y, h);
    Stencil { i0, i1, j0, j1, ty, tx, dx_live, dy_live }
}

/// Bilinear interpolation of an H×W×D map at continuous location `(x, y)`,
/// where texel `(i, j)` sits at `(j, i)`. Locations outside the texel grid
/// clamp to the border.
pub fn bilinear_sample(data: &[f64], h: usize, w: usize, d: usize, x: f64, y: f64, out: &mut [f64]) {
    let s = stencil(h, w, x, y);
    let a = &data[(s.i0 * w + s.j0) * d..][..d];
    let b = &data[(s.i0 * w + s.j1) * d..][..d];
    let c = &data[(s.i1 * w + s.j0) * d..][..d];
    let e = &data[(s.i1 * w + s.j1) * d..][..d];
    for k in 0..d {
        let top = a[k] + s.tx * (b[k] - a[k]);
        let bottom = c[k] + s.tx * (e[k] - c[k]);
        out[k] = top + s.ty * (bottom - top);
    }
}

/// Like [`bilinear_sample`] but ignoring texels whose `mask` entry is
/// false, renormalizing the remaining weights. Falls back to the plain
/// sample when every texel of the stencil is masked out.
#[allow(clippy::too_many_arguments)]
pub fn masked_bilinear_sample(data: &[f64], mask: &[bool], h: usize, w: usize, d: usize, x: f64, y: f64, out: &mut [f64]) {
    let s = stencil(h, w, x, y);
    let taps = [
        (s.i0 * w + s.j0, (1.0 - s.tx) * (1.0 - s.ty)),
        (s.i0 * w + s.j1, s.tx * (1.0 - s.ty)),
        (s.i1 * w + s.j0, (1.0 - s.tx) * s.ty),
        (s.i1 * w + s.j1, s.tx * s.ty),
    ];
    let total: f64 = taps.iter().filter(|(p, _)| mask[*p]).map(|(_, wt)| wt).sum();
    if !(total > 0.0) {
        bilinear_sample(data, h, w, d, x, y, out);
        return;
    }
    out.iter_mut().for_each(|o| *o = 0.0);
    for &(p, wt) in taps.iter().filter(|(p, _)| mask[*p]) {
        for (o, v) in out.iter_mut().zip(&data[p * d..(p + 1) * d]) {
            *o += wt / total * v;
        }
    }
}

/// Like [`bilinear_sample`], also writing the partial derivatives of every
/// channel with respect to `x` and `y`. Clamped coordinates have zero
/// derivative.
#[allow(clippy::too_many_arguments)]
pub fn bilinear_sample_with_grad(
    data: &[f64],
    h: usize,
    w: usize,
    d: usize,
    x: f64,
    y: f64,
    out: &mut [f64],
    dx: &mut [f64],
    dy: &mut [f64],
) {
    let s = stencil(h, w, x, y);
    let a = &data[(s.i0 * w + s.j0) * d..][..d];
    let b = &data[(s.i0 * w + s.j1) * d..][..d];
    let c = &data[(s.i1 * w + s.j0) * d..][..d];
    let e = &data[(s.i1 * w + s.j1) * d..][..d];
    for k in 0..d {
        let top = a[k] + s.tx * (b[k] - a[k]);
        let bottom = c[k] + s.tx * (e[k] - c[k]);
        out[k] = top + s.ty * (bottom - top);
        dx[k] = s.dx_live * ((1.0 - s.ty) * (b[k] - a[k]) + s.ty * (e[k] - c[k]));
        dy[k] = s.dy_live * (bottom - top);
    }
}
