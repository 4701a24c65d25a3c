//! Procedural ground-truth scenarios: a rigged tube chain, a smooth
//! sinusoidal motion and the feature video of that motion as rendered with
//! smooth random per-vertex descriptors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::EvalError;
use crate::anim::{AnimModel, Bone, EndSite, SkeletalLBS};
use crate::features::FeatureVideo;
use crate::fitting::AnimationClip;
use crate::mesh::{Camera, FeatureMap, Mesh, Vec3};
use crate::raster::{project_vertices, rasterize_features};

pub const BONE_LENGTH: f64 = 1.0;
pub const TUBE_RADIUS: f64 = 0.3;
pub const RING_SEGMENTS: usize = 12;
pub const IMAGE_SIZE: (usize, usize) = (1280, 704);
pub const FEATURE_SIZE: (usize, usize) = (160, 88);
/// Fraction of the image width spanned by the rest mesh.
const SCREEN_FILL: f64 = 0.75;
/// Spatial frequency of the descriptor field, cycles per world unit of the
/// image plane at the mesh distance.
const FEATURE_FREQUENCY: f64 = 6.0;
/// Half-width of the skinning blend around each joint.
const BLEND: f64 = 0.3;
/// Rest-pose bend of every non-root bone, radians about z then y.
const REST_BEND: (f64, f64) = (0.45, 0.3);

/// A rig, its ground-truth motion and the feature video it produces.
#[derive(Debug, Clone)]
pub struct SyntheticScenario {
    pub seed: u64,
    pub amplitude: f64,
    pub rig: SkeletalLBS,
    pub camera: Camera,
    pub gt_poses: Vec<Vec<f64>>,
    pub gt_joints: Vec<Vec<Vec3>>,
    pub gt_vertices: Vec<Vec<Vec3>>,
    /// `N×D` unit-norm descriptors attached to the vertices.
    pub vertex_features: Vec<f64>,
    pub background: FeatureMap,
    pub features: FeatureVideo,
}

impl SyntheticScenario {
    pub fn mesh(&self) -> &Mesh {
        self.rig.rest()
    }

    pub fn model(&self) -> AnimModel {
        AnimModel::Skeletal(self.rig.clone())
    }

    pub fn gt_clip(&self) -> AnimationClip {
        AnimationClip::from_poses(&self.model(), self.gt_poses.clone()).expect("ground-truth poses fit the rig")
    }

    pub fn frames(&self) -> usize {
        self.gt_poses.len()
    }
}

/// Straight tube along +x with closed ends: `rings × RING_SEGMENTS`
/// vertices plus two cap centers.
fn tube(n_bones: usize, n_vertices: usize) -> Mesh {
    let length = n_bones as f64 * BONE_LENGTH;
    let rings = ((n_vertices.saturating_sub(2)) / RING_SEGMENTS).max(2);
    let mut v = Vec::with_capacity(rings * RING_SEGMENTS + 2);
    for k in 0..rings {
        let x = length * k as f64 / (rings - 1) as f64;
        for s in 0..RING_SEGMENTS {
            let th = 2.0 * std::f64::consts::PI * s as f64 / RING_SEGMENTS as f64;
            v.push([x, TUBE_RADIUS * th.cos(), TUBE_RADIUS * th.sin()]);
        }
    }
    let (start, end) = (v.len(), v.len() + 1);
    v.push([-0.5 * TUBE_RADIUS, 0.0, 0.0]);
    v.push([length + 0.5 * TUBE_RADIUS, 0.0, 0.0]);
    let m = RING_SEGMENTS;
    let mut f = Vec::new();
    for k in 0..rings - 1 {
        for s in 0..m {
            let (a, b) = (k * m + s, k * m + (s + 1) % m);
            f.push([a, b, a + m]);
            f.push([b, b + m, a + m]);
        }
    }
    let last = (rings - 1) * m;
    for s in 0..m {
        f.push([start, (s + 1) % m, s]);
        f.push([end, last + s, last + (s + 1) % m]);
    }
    Mesh::new(v, f).expect("tube is valid")
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Partition-of-unity weights blending neighbouring bones over
/// `[joint − BLEND, joint + BLEND]`.
fn chain_weights(mesh: &Mesh, n_bones: usize) -> Vec<f64> {
    let rise = |x: f64, b: usize| if b == 0 { 1.0 } else { smoothstep((x - b as f64 * BONE_LENGTH + BLEND) / (2.0 * BLEND)) };
    mesh.vertices()
        .iter()
        .flat_map(|v| {
            (0..n_bones).map(move |b| {
                let upper = if b + 1 < n_bones { rise(v[0], b + 1) } else { 0.0 };
                rise(v[0], b) - upper
            })
        })
        .collect()
}

fn chain_rig(mesh: Mesh, n_bones: usize) -> SkeletalLBS {
    let bones = (0..n_bones)
        .map(|b| Bone { name: format!("bone{b}"), parent: b.checked_sub(1), head: [b as f64 * BONE_LENGTH, 0.0, 0.0] })
        .collect();
    let tip = EndSite { bone: n_bones - 1, position: [n_bones as f64 * BONE_LENGTH, 0.0, 0.0] };
    let weights = chain_weights(&mesh, n_bones);
    SkeletalLBS::new(mesh, bones, vec![tip], weights).expect("chain rig is valid")
}

/// The chain posed with its rest bend and re-rigged in that pose, centered
/// on the origin.
fn bent_rig(n_bones: usize, n_vertices: usize) -> SkeletalLBS {
    let straight = chain_rig(tube(n_bones, n_vertices), n_bones);
    let mut p = vec![0.0; straight.param_count()];
    for b in 1..n_bones {
        p[3 * b + 1] = REST_BEND.1;
        p[3 * b + 2] = REST_BEND.0;
    }
    let verts = straight.apply(&p).expect("bend pose");
    let joints = straight.joints(&p).expect("bend pose");
    let c = Mesh::new(verts.clone(), straight.rest().faces().to_vec()).expect("bent tube").centroid();
    let shift = |x: Vec3| [x[0] - c[0], x[1] - c[1], x[2] - c[2]];
    let mesh = Mesh::new(verts.into_iter().map(shift).collect(), straight.rest().faces().to_vec()).expect("bent tube");
    let bones = straight.bones().iter().zip(&joints).map(|(b, &j)| Bone { head: shift(j), ..b.clone() }).collect();
    let tip = EndSite { bone: n_bones - 1, position: shift(joints[n_bones]) };
    SkeletalLBS::new(mesh, bones, vec![tip], straight.weights().to_vec()).expect("bent rig is valid")
}

fn unit_vector(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v: Vec3 = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-6 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

/// `D` smooth functions of position, normalized to unit norm per point.
struct SmoothField {
    waves: Vec<([f64; 3], f64)>,
}

impl SmoothField {
    fn new(rng: &mut ChaCha8Rng, channels: usize, frequency: f64) -> Self {
        let waves = (0..channels)
            .map(|_| {
                let k: f64 = rng.random_range(0.5..1.5) * frequency;
                let d = unit_vector(rng);
                ([k * d[0], k * d[1], k * d[2]], rng.random_range(0.0..std::f64::consts::TAU))
            })
            .collect();
        SmoothField { waves }
    }

    fn eval(&self, p: Vec3, out: &mut [f64]) {
        for (o, (k, phase)) in out.iter_mut().zip(&self.waves) {
            *o = (k[0] * p[0] + k[1] * p[1] + k[2] * p[2] + phase).sin();
        }
    }

    fn eval_unit(&self, p: Vec3, out: &mut [f64]) {
        self.eval(p, out);
        let n = out.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 {
            out.iter_mut().for_each(|x| *x /= n);
        } else {
            out[0] = 1.0;
        }
    }
}

/// Ground-truth pose of frame `l`: per-bone axis-angle sinusoids that are
/// zero at frame 0, plus a small global translation.
fn gt_pose(l: usize, frames: usize, axes: &[(Vec3, f64, f64)], amplitude: f64) -> Vec<f64> {
    let t = if frames > 1 { l as f64 / (frames - 1) as f64 } else { 0.0 };
    let mut p = Vec::with_capacity(3 * axes.len());
    for &(axis, omega, gain) in axes {
        let theta = amplitude * gain * (omega * t).sin();
        p.extend(axis.map(|a| a * theta));
    }
    p
}

/// Builds a scenario: an `n_bones` tube chain of about `n_vertices`
/// vertices, `frames` frames of motion whose joint angles peak at
/// `amplitude` radians, rendered into a `feature_dim`-channel feature video
/// at 160×88 from a 1280×704 camera. Deterministic per seed.
pub fn generate_scenario(
    seed: u64,
    n_bones: usize,
    n_vertices: usize,
    frames: usize,
    feature_dim: usize,
    amplitude: f64,
) -> Result<SyntheticScenario, EvalError> {
    if n_bones == 0 || frames == 0 || feature_dim == 0 {
        return Err(EvalError::InvalidParameter("bones, frames and feature_dim must be positive".into()));
    }
    if n_vertices < 2 * RING_SEGMENTS + 2 {
        return Err(EvalError::InvalidParameter(format!("n_vertices must be at least {}", 2 * RING_SEGMENTS + 2)));
    }
    if !(amplitude >= 0.0 && amplitude.is_finite()) {
        return Err(EvalError::InvalidParameter(format!("amplitude must be finite and non-negative, got {amplitude}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rig = bent_rig(n_bones, n_vertices);
    let mesh = rig.rest().clone();
    let (lo, hi) = mesh.bounding_box();
    let extent = (hi[0] - lo[0]).max(hi[1] - lo[1]);
    let (w, h) = IMAGE_SIZE;
    let focal = 1000.0;
    let distance = focal * extent / (SCREEN_FILL * w as f64) + hi[2].max(-lo[2]);
    let camera = Camera::at_center(focal, focal, (w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0, [0.0, 0.0, -distance], w, h)
        .expect("valid camera");

    let axes: Vec<(Vec3, f64, f64)> = (0..n_bones)
        .map(|b| (unit_vector(&mut rng), std::f64::consts::PI * rng.random_range(0.6..1.4), if b == 0 { 0.4 } else { 1.0 }))
        .collect();
    let shift_dir = unit_vector(&mut rng);
    let shift_omega = std::f64::consts::PI * rng.random_range(0.6..1.4);
    let gt_poses: Vec<Vec<f64>> = (0..frames)
        .map(|l| {
            let mut p = gt_pose(l, frames, &axes, amplitude);
            let t = if frames > 1 { l as f64 / (frames - 1) as f64 } else { 0.0 };
            // raw translation; the rig scales it by 0.1
            p.extend(shift_dir.map(|d| d * amplitude * (shift_omega * t).sin()));
            p
        })
        .collect();
    let gt_vertices = gt_poses.iter().map(|p| rig.apply(p)).collect::<Result<Vec<_>, _>>()?;
    let gt_joints = gt_poses.iter().map(|p| rig.joints(p)).collect::<Result<Vec<_>, _>>()?;

    for (l, verts) in gt_vertices.iter().enumerate() {
        for s in project_vertices(verts, &camera) {
            if !(s.depth > 0.0 && s.x >= 0.0 && s.y >= 0.0 && s.x <= (w - 1) as f64 && s.y <= (h - 1) as f64) {
                return Err(EvalError::Frustum(format!("frame {l}: a vertex projects to ({:.1}, {:.1}) at depth {:.3}", s.x, s.y, s.depth)));
            }
        }
    }

    // Descriptors vary across the image plane of the rest view, as features
    // lifted from a reference frame do.
    let vertex_field = SmoothField::new(&mut rng, feature_dim, FEATURE_FREQUENCY);
    let mut vertex_features = vec![0.0; mesh.vertex_count() * feature_dim];
    let pixels_per_unit = focal / distance;
    for (i, &v) in mesh.vertices().iter().enumerate() {
        let s = camera.project_point(v).map_err(|e| EvalError::Frustum(format!("rest vertex {i}: {e}")))?;
        let q = [s.x / pixels_per_unit, s.y / pixels_per_unit, 0.0];
        vertex_field.eval_unit(q, &mut vertex_features[i * feature_dim..(i + 1) * feature_dim]);
    }
    let (fw, fh) = FEATURE_SIZE;
    let bg_field = SmoothField::new(&mut rng, feature_dim, 0.15);
    let mut background = FeatureMap::zeros(fh, fw, feature_dim);
    for i in 0..fh {
        for j in 0..fw {
            let p = (i * fw + j) * feature_dim;
            bg_field.eval_unit([j as f64, i as f64, 0.0], &mut background.data[p..p + feature_dim]);
        }
    }
    let images = gt_vertices
        .iter()
        .map(|v| rasterize_features(&mesh.with_vertices(v.clone()), &camera, &vertex_features, &background).map(|img| img.features))
        .collect::<Result<Vec<_>, _>>()?;
    let mut features = FeatureVideo::from_frames(&images).map_err(EvalError::Shape)?;
    features.metadata = format!("synthetic seed={seed} bones={n_bones} amplitude={amplitude}");

    Ok(SyntheticScenario { seed, amplitude, rig, camera, gt_poses, gt_joints, gt_vertices, vertex_features, background, features })
}

/// Adds spatially smooth noise, drawn independently per frame, to every
/// frame except the reference. `level` is the noise norm relative to the
/// unit-norm descriptors.
pub fn perturb_features(fv: &FeatureVideo, level: f64, seed: u64) -> FeatureVideo {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6e6f_6973_6500_0000);
    let mut out = fv.clone();
    let (h, w, d) = (fv.height, fv.width, fv.channels);
    let mut buf = vec![0.0; d];
    let scale = level * (2.0 / d as f64).sqrt();
    for l in 0..fv.frames {
        if l == fv.reference {
            continue;
        }
        let field = SmoothField::new(&mut rng, d, 0.2);
        let base = l * fv.frame_len();
        for i in 0..h {
            for j in 0..w {
                field.eval([j as f64, i as f64, 0.0], &mut buf);
                let p = base + (i * w + j) * d;
                for c in 0..d {
                    out.data[p + c] += (scale * buf[c]) as f32;
                }
            }
        }
    }
    out.metadata = format!("{} noise={level}", fv.metadata);
    out
}
