//! The fitting objective: rendering, depth, smoothness, fidelity and
//! Jacobian terms, as plain functions and as tape operations.

use std::rc::Rc;

use super::config::{FitConfig, LossMode};
use super::FitError;
use crate::anim::Mat3;
use crate::autodiff::ops::{cosine, cosine_vjp, sign};
use crate::autodiff::{Tensor, Var};
use crate::mesh::{Camera, FeatureMap};
use crate::raster::{kernel::screen_to_world_vjp, project_vertices, rasterize, Rasterization};

/// Rendering loss over frames: `1 − mean κ` (cosine) or the mean squared
/// difference (mse), averaged over every pixel of every frame.
pub fn loss_render(rendered: &[FeatureMap], target: &[FeatureMap], mode: LossMode) -> Result<f64, FitError> {
    if rendered.len() != target.len() || rendered.is_empty() {
        return Err(FitError::Shape(format!("{} rendered frames for {} targets", rendered.len(), target.len())));
    }
    let mut acc = 0.0;
    let mut count = 0usize;
    for (r, t) in rendered.iter().zip(target) {
        if (r.height, r.width, r.channels) != (t.height, t.width, t.channels) {
            return Err(FitError::Shape(format!(
                "rendered {}×{}×{} vs target {}×{}×{}",
                r.height, r.width, r.channels, t.height, t.width, t.channels
            )));
        }
        let d = r.channels;
        for p in 0..r.height * r.width {
            let (a, b) = (&r.data[p * d..(p + 1) * d], &t.data[p * d..(p + 1) * d]);
            acc += pixel_term(a, b, mode);
        }
        count += r.height * r.width * if mode == LossMode::Mse { d } else { 1 };
    }
    Ok(match mode {
        LossMode::Cosine => 1.0 - acc / count as f64,
        LossMode::Mse => acc / count as f64,
    })
}

#[inline]
fn pixel_term(a: &[f64], b: &[f64], mode: LossMode) -> f64 {
    match mode {
        LossMode::Cosine => cosine(a, b),
        LossMode::Mse => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum(),
    }
}

/// `(1/(L·N)) Σ_l Σ_n |(d̄⁰ − d⁰_n) − (d̄ˡ − dˡ_n)|` for per-frame vertex
/// depths; frame 0 is the reference.
pub fn loss_depth(depths: &[Vec<f64>]) -> f64 {
    let n = depths[0].len();
    let mean = |d: &[f64]| d.iter().sum::<f64>() / n as f64;
    let m0 = mean(&depths[0]);
    let mut acc = 0.0;
    for d in depths {
        let ml = mean(d);
        for i in 0..n {
            acc += ((m0 - depths[0][i]) - (ml - d[i])).abs();
        }
    }
    acc / (depths.len() * n) as f64
}

/// `(1/((L−1)·N)) Σ_l ‖p^l − p^{l+1}‖₁` with `N` the vertex count.
pub fn loss_smooth(poses: &[Vec<f64>], vertices: usize) -> Result<f64, FitError> {
    if poses.len() < 2 {
        return Err(FitError::TooFewFrames(poses.len()));
    }
    let s: f64 = poses.windows(2).map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| (a - b).abs()).sum::<f64>()).sum();
    Ok(s / ((poses.len() - 1) * vertices) as f64)
}

/// `(1/(L·N)) Σ_l ‖α·m(γ(l))‖₁`: the L1 norm of the pose offsets from
/// `p_init`, with `N` the vertex count.
pub fn loss_fidelity(offsets: &[Vec<f64>], vertices: usize) -> f64 {
    let s: f64 = offsets.iter().map(|o| o.iter().map(|x| x.abs()).sum::<f64>()).sum();
    s / (offsets.len() * vertices) as f64
}

/// `(1/(2M)) Σ_f (‖J_f − I‖_F + ‖J_f − I‖₁)`.
pub fn loss_jacobian(jacobians: &[Mat3]) -> f64 {
    let mut acc = 0.0;
    for j in jacobians {
        let (mut fro, mut l1) = (0.0, 0.0);
        for r in 0..3 {
            for c in 0..3 {
                let d = j[r][c] - if r == c { 1.0 } else { 0.0 };
                fro += d * d;
                l1 += d.abs();
            }
        }
        acc += fro.sqrt() + l1;
    }
    acc / (2 * jacobians.len()) as f64
}

/// Unweighted loss terms of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct LossComponents {
    pub render: f64,
    pub depth: f64,
    pub smooth: f64,
    pub fidelity: f64,
    /// Present for Jacobian-field models only.
    pub jacobian: Option<f64>,
}

/// `w_r L_r + w_d L_d + w_s L_s + w_f L_f (+ w_j L_j)`.
pub fn total_loss(c: &LossComponents, config: &FitConfig) -> f64 {
    let base = config.w_render * c.render + config.w_depth * c.depth + config.w_smooth * c.smooth + config.w_fidelity * c.fidelity;
    match c.jacobian {
        Some(j) => base + config.w_jacobian * j,
        None => base,
    }
}

/// Depth loss on a tape; `vertices` is `F×N×3`.
pub fn depth_loss_op<'t>(vertices: Var<'t>, camera: &Camera) -> Var<'t> {
    let v = vertices.value();
    let shape = v.shape().to_vec();
    assert!(shape.len() == 3 && shape[2] == 3, "vertices must be F×N×3");
    let (frames, n) = (shape[0], shape[1]);
    let depths: Vec<Vec<f64>> = (0..frames)
        .map(|f| v.data()[f * n * 3..(f + 1) * n * 3].chunks(3).map(|c| camera.to_camera_space([c[0], c[1], c[2]])[2]).collect())
        .collect();
    let value = loss_depth(&depths);
    let dir = camera.depth_direction();
    vertices.tape().custom(&[vertices], Tensor::scalar(value), move |g, _, _| {
        let scale = g.item() / (frames * n) as f64;
        let mean = |d: &[f64]| d.iter().sum::<f64>() / n as f64;
        let m0 = mean(&depths[0]);
        let mut grad_d = vec![vec![0.0; n]; frames];
        for l in 1..frames {
            let ml = mean(&depths[l]);
            let s: Vec<f64> = (0..n).map(|i| scale * sign((m0 - depths[0][i]) - (ml - depths[l][i]))).collect();
            let total: f64 = s.iter().sum();
            for i in 0..n {
                let t = total / n as f64 - s[i];
                grad_d[0][i] += t;
                grad_d[l][i] -= t;
            }
        }
        let grad: Vec<f64> = grad_d.iter().flatten().flat_map(|&gd| dir.map(|c| gd * c)).collect();
        vec![Tensor::from_shape(&shape, grad)]
    })
}

/// Jacobian regularizer on a tape, averaged over frames. `offsets` is `F×P`
/// and its first `9·M` columns hold `J_f − I`.
pub fn jacobian_loss_op<'t>(offsets: Var<'t>, jacobian_params: usize) -> Var<'t> {
    let o = offsets.value();
    let p = o.last_dim();
    let frames = o.len() / p;
    let faces = jacobian_params / 9;
    let norm = (2 * faces * frames) as f64;
    let mut value = 0.0;
    for f in 0..frames {
        for d in o.data()[f * p..f * p + jacobian_params].chunks(9) {
            value += d.iter().map(|x| x * x).sum::<f64>().sqrt() + d.iter().map(|x| x.abs()).sum::<f64>();
        }
    }
    offsets.tape().custom(&[offsets], Tensor::scalar(value / norm), move |g, inp, _| {
        let x = inp[0].data();
        let s = g.item() / norm;
        let mut out = vec![0.0; x.len()];
        for f in 0..frames {
            let row = f * p;
            for k in 0..faces {
                let b = row + 9 * k;
                let d = &x[b..b + 9];
                let fro = d.iter().map(|v| v * v).sum::<f64>().sqrt();
                for i in 0..9 {
                    let df = if fro > 0.0 { d[i] / fro } else { 0.0 };
                    out[b + i] = s * (df + sign(d[i]));
                }
            }
        }
        vec![Tensor::from_shape(inp[0].shape(), out)]
    })
}

/// Everything the fused rendering loss needs besides the posed vertices.
#[derive(Debug, Clone)]
pub struct RenderTarget {
    faces: Rc<Vec<[usize; 3]>>,
    /// Camera at the feature resolution.
    camera: Camera,
    /// `N×D`.
    vertex_features: Vec<f64>,
    background: FeatureMap,
    targets: Vec<FeatureMap>,
    /// Per frame and pixel, the loss term of the background value.
    background_terms: Vec<Vec<f64>>,
    mode: LossMode,
}

impl RenderTarget {
    /// `camera` may be at any resolution; it is rescaled to the targets'.
    pub fn new(
        faces: Rc<Vec<[usize; 3]>>,
        camera: &Camera,
        vertex_features: Vec<f64>,
        background: FeatureMap,
        targets: Vec<FeatureMap>,
        mode: LossMode,
    ) -> Result<Self, FitError> {
        let (h, w, d) = (background.height, background.width, background.channels);
        if targets.iter().any(|t| (t.height, t.width, t.channels) != (h, w, d)) {
            return Err(FitError::Shape("target frames differ from the background shape".into()));
        }
        if d == 0 || vertex_features.len() % d != 0 {
            return Err(FitError::Shape(format!("{} vertex feature values for {d} channels", vertex_features.len())));
        }
        let background_terms = targets
            .iter()
            .map(|t| (0..h * w).map(|p| pixel_term(&background.data[p * d..(p + 1) * d], &t.data[p * d..(p + 1) * d], mode)).collect())
            .collect();
        let camera = if camera.width() == w && camera.height() == h { camera.clone() } else { camera.rescaled(w, h) };
        Ok(RenderTarget { faces, camera, vertex_features, background, targets, background_terms, mode })
    }

    pub fn frames(&self) -> usize {
        self.targets.len()
    }

    pub fn camera(&self) -> &Camera {
        &self.camera
    }

    pub fn mode(&self) -> LossMode {
        self.mode
    }

    pub fn background(&self) -> &FeatureMap {
        &self.background
    }

    pub fn targets(&self) -> &[FeatureMap] {
        &self.targets
    }

    pub fn vertex_features(&self) -> &[f64] {
        &self.vertex_features
    }

    fn rasterize_frame(&self, verts: &[[f64; 3]]) -> Rasterization {
        rasterize(project_vertices(verts, &self.camera), &self.faces, self.background.width, self.background.height)
    }

    fn normalizer(&self, frames: usize) -> f64 {
        let px = (frames * self.background.width * self.background.height) as f64;
        match self.mode {
            LossMode::Cosine => px,
            LossMode::Mse => px * self.background.channels as f64,
        }
    }
}

fn rows3(data: &[f64]) -> Vec<[f64; 3]> {
    data.chunks(3).map(|c| [c[0], c[1], c[2]]).collect()
}

/// Rendering loss of posed vertices (`F×N×3`) against the first `F` target
/// frames, fused so that background pixels are never materialized.
pub fn render_loss_op<'t>(target: Rc<RenderTarget>, vertices: Var<'t>) -> Var<'t> {
    let v = vertices.value();
    let shape = v.shape().to_vec();
    assert!(shape.len() == 3 && shape[2] == 3, "vertices must be F×N×3");
    let (frames, n) = (shape[0], shape[1]);
    assert!(frames <= target.frames(), "more posed frames than targets");
    let d = target.background.channels;
    let mut acc = 0.0;
    let mut rasters = Vec::with_capacity(frames);
    let mut buf = vec![0.0; d];
    for f in 0..frames {
        let r = target.rasterize_frame(&rows3(&v.data()[f * n * 3..(f + 1) * n * 3]));
        let t = &target.targets[f];
        for p in 0..r.face.len() {
            if r.covered(p) {
                r.interpolate(&target.faces, &target.vertex_features, d, p, &mut buf);
                acc += pixel_term(&buf, &t.data[p * d..(p + 1) * d], target.mode);
            } else {
                acc += target.background_terms[f][p];
            }
        }
        rasters.push(r);
    }
    let norm = target.normalizer(frames);
    let value = match target.mode {
        LossMode::Cosine => 1.0 - acc / norm,
        LossMode::Mse => acc / norm,
    };
    vertices.tape().custom(&[vertices], Tensor::scalar(value), move |g, inp, _| {
        let coef = match target.mode {
            LossMode::Cosine => -g.item() / norm,
            LossMode::Mse => g.item() / norm,
        };
        let vd = inp[0].data();
        let feats = &target.vertex_features;
        let mut grad = Vec::with_capacity(vd.len());
        let (mut buf, mut gf, mut scratch) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
        for (f, r) in rasters.iter().enumerate() {
            let verts = rows3(&vd[f * n * 3..(f + 1) * n * 3]);
            let t = &target.targets[f];
            let mut grad_xy = vec![[0.0; 2]; n];
            for p in 0..r.face.len() {
                if !r.covered(p) {
                    continue;
                }
                r.interpolate(&target.faces, feats, d, p, &mut buf);
                let tp = &t.data[p * d..(p + 1) * d];
                match target.mode {
                    LossMode::Cosine => {
                        gf.iter_mut().for_each(|x| *x = 0.0);
                        cosine_vjp(&buf, tp, coef, &mut gf, &mut scratch);
                    }
                    LossMode::Mse => {
                        for c in 0..d {
                            gf[c] = 2.0 * coef * (buf[c] - tp[c]);
                        }
                    }
                }
                let face = target.faces[r.face[p] as usize];
                let mut gw = [0.0; 3];
                for k in 0..3 {
                    let fk = &feats[face[k] * d..(face[k] + 1) * d];
                    gw[k] = fk.iter().zip(&gf).map(|(a, b)| a * b).sum();
                }
                r.bary_vjp(&target.faces, p, gw, &mut grad_xy);
            }
            grad.extend(screen_to_world_vjp(&verts, &target.camera, &grad_xy).into_iter().flatten());
        }
        vec![Tensor::from_shape(&shape, grad)]
    })
}
