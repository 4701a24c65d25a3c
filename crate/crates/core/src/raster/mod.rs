//! Hard rasterization of per-vertex attributes with interpolation-only
//! gradients.
//!
//! Coverage (which face wins a pixel) is treated as locally constant; vertex
//! positions receive gradients through the screen-space barycentric weights
//! of the pixels they cover. There is no silhouette blending and no
//! back-face culling. See [`kernel`] for the exact coverage rule.

mod dump;
pub mod kernel;

use std::rc::Rc;

pub use dump::{write_pgm, write_pgm_masked};
pub use kernel::{project_vertices, rasterize, Rasterization, ScreenVertex, NO_FACE};

use crate::autodiff::{Tensor, Var};
use crate::mesh::{Camera, FeatureMap, Mesh, Vec3};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RasterError {
    #[error("vertex features have {got} rows but the mesh has {expected} vertices")]
    FeatureRows { expected: usize, got: usize },
    #[error("background has {got} channels, vertex features have {expected}")]
    Channels { expected: usize, got: usize },
}

/// A rendered feature image with its coverage mask.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureImage {
    pub features: FeatureMap,
    pub mask: Vec<bool>,
}

/// Nearest depth per pixel (`+∞` where empty) and the foreground mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMask {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f64>,
    pub mask: Vec<bool>,
}

impl DepthMask {
    pub fn covered_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// The camera adjusted to render at `width`×`height`.
fn camera_for(camera: &Camera, width: usize, height: usize) -> Camera {
    if camera.width() == width && camera.height() == height {
        camera.clone()
    } else {
        camera.rescaled(width, height)
    }
}

/// Rasterizes per-vertex features (`N×D`, row-major) over `background`,
/// whose size fixes the output resolution. The camera is rescaled to that
/// resolution when it differs.
pub fn rasterize_features(mesh: &Mesh, camera: &Camera, vertex_features: &[f64], background: &FeatureMap) -> Result<FeatureImage, RasterError> {
    let d = background.channels;
    let n = mesh.vertex_count();
    if d == 0 || vertex_features.len() != n * d {
        let got = if d == 0 { vertex_features.len() } else { vertex_features.len() / d };
        return if d != 0 && vertex_features.len() % d == 0 {
            Err(RasterError::FeatureRows { expected: n, got })
        } else {
            Err(RasterError::Channels { expected: vertex_features.len() / n.max(1), got: d })
        };
    }
    let cam = camera_for(camera, background.width, background.height);
    let r = rasterize(project_vertices(mesh.vertices(), &cam), mesh.faces(), background.width, background.height);
    let mut out = background.clone();
    for p in 0..r.face.len() {
        if r.covered(p) {
            r.interpolate(mesh.faces(), vertex_features, d, p, &mut out.data[p * d..(p + 1) * d]);
        }
    }
    Ok(FeatureImage { features: out, mask: r.coverage_mask() })
}

/// Per-pixel nearest depth and coverage at the camera's resolution.
pub fn render_depth_mask(mesh: &Mesh, camera: &Camera) -> DepthMask {
    let r = rasterize(project_vertices(mesh.vertices(), camera), mesh.faces(), camera.width(), camera.height());
    let mask = r.coverage_mask();
    DepthMask { width: r.width, height: r.height, depth: r.depth, mask }
}

/// Camera-space depth of every vertex, visible or not.
pub fn vertex_depths(mesh: &Mesh, camera: &Camera) -> Vec<f64> {
    mesh.vertices().iter().map(|&v| camera.to_camera_space(v)[2]).collect()
}

fn vec3_rows(t: &Tensor) -> Vec<Vec3> {
    t.data().chunks(3).map(|c| [c[0], c[1], c[2]]).collect()
}

/// Differentiable rasterization on a tape: `vertices` is `N×3`, `features`
/// is `N×D`; the result is `H×W×D` with the background's size.
pub fn rasterize_features_op<'t>(
    faces: Rc<Vec<[usize; 3]>>,
    camera: &Camera,
    vertices: Var<'t>,
    features: Var<'t>,
    background: Rc<FeatureMap>,
) -> Var<'t> {
    let (vt, ft) = (vertices.value(), features.value());
    let d = background.channels;
    let (w, h) = (background.width, background.height);
    assert_eq!(vt.last_dim(), 3, "vertices must be N×3");
    assert_eq!(ft.len(), vt.len() / 3 * d, "features must be N×D");
    let cam = camera_for(camera, w, h);
    let verts = vec3_rows(&vt);
    let r = rasterize(project_vertices(&verts, &cam), &faces, w, h);
    let mut out = background.data.clone();
    for p in 0..r.face.len() {
        if r.covered(p) {
            r.interpolate(&faces, ft.data(), d, p, &mut out[p * d..(p + 1) * d]);
        }
    }
    let tape = vertices.tape();
    tape.custom(&[vertices, features], Tensor::from_shape(&[h, w, d], out), move |g, inp, _| {
        let feats = inp[1].data();
        let n = verts.len();
        let mut grad_f = vec![0.0; n * d];
        let mut grad_xy = vec![[0.0; 2]; n];
        for p in 0..r.face.len() {
            if !r.covered(p) {
                continue;
            }
            let gp = &g.data()[p * d..(p + 1) * d];
            let f = faces[r.face[p] as usize];
            let wts = r.weights(p);
            let mut gw = [0.0; 3];
            for k in 0..3 {
                let fk = &feats[f[k] * d..(f[k] + 1) * d];
                let acc = &mut grad_f[f[k] * d..(f[k] + 1) * d];
                let mut s = 0.0;
                for c in 0..d {
                    s += gp[c] * fk[c];
                    acc[c] += wts[k] * gp[c];
                }
                gw[k] = s;
            }
            r.bary_vjp(&faces, p, gw, &mut grad_xy);
        }
        let gv: Vec<f64> = kernel::screen_to_world_vjp(&verts, &cam, &grad_xy).into_iter().flatten().collect();
        vec![Tensor::from_shape(inp[0].shape(), gv), Tensor::from_shape(inp[1].shape(), grad_f)]
    })
}
