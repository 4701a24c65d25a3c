//! Motion fitting: the pose regressor, the losses, the warm-up schedule and
//! the optimization loop producing an [`AnimationClip`].

mod config;
mod losses;
mod mlp;

use std::fmt;
use std::path::Path;
use std::rc::Rc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{
    active_frames, frame_encoding, frequency_encode, FitConfig, LossMode, DEFAULT_ADAM_EPS, DEFAULT_ALPHA, DEFAULT_W_DEPTH, DEFAULT_W_FIDELITY,
    DEFAULT_W_JACOBIAN, DEFAULT_W_RENDER, DEFAULT_W_SMOOTH,
};
pub use losses::{
    depth_loss_op, jacobian_loss_op, loss_depth, loss_fidelity, loss_jacobian, loss_render, loss_smooth, render_loss_op, total_loss,
    LossComponents, RenderTarget,
};
pub use mlp::{PoseRegressor, OUTPUT_INIT_SCALE};

use crate::anim::{pose_op, AnimError, AnimModel};
use crate::autodiff::ops::cosine;
use crate::autodiff::{adam_step, AdamConfig, AdamState, Tape, Tensor, Var};
use crate::features::{inpaint_background_features, project_features_to_vertices, FeatureError, FeatureVideo};
use crate::mesh::{Camera, Mesh, Vec3};
use crate::raster::{project_vertices, rasterize, render_depth_mask};

pub const CLIP_FORMAT: &str = "motionfit-clip";
pub const CLIP_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("invalid fit configuration: {0}")]
    Config(String),
    #[error("the smoothness loss needs at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Anim(#[from] AnimError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("non-finite loss or gradient at iteration {iteration}")]
    NonFinite { iteration: usize },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
}

/// One optimization step as logged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub active_frames: usize,
    pub total: f64,
    pub losses: LossComponents,
}

impl fmt::Display for IterationRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.losses;
        write!(
            f,
            "iter={} frames={} total={:.9e} render={:.9e} depth={:.9e} smooth={:.9e} fidelity={:.9e}",
            self.iteration, self.active_frames, self.total, c.render, c.depth, c.smooth, c.fidelity
        )?;
        if let Some(j) = c.jacobian {
            write!(f, " jacobian={j:.9e}")?;
        }
        Ok(())
    }
}

/// Summary of a finished fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub loss_mode: LossMode,
    pub iterations: usize,
    /// Unweighted losses of the final weights over all frames.
    pub final_losses: LossComponents,
    pub final_total: f64,
    /// Not serialized, so that saved clips are reproducible byte for byte.
    #[serde(skip)]
    pub wall_time_s: f64,
    #[serde(skip)]
    pub history: Vec<IterationRecord>,
}

/// Per-frame pose vectors and the posed vertices they produce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnimationClip {
    pub format: String,
    pub version: u32,
    pub model: String,
    pub poses: Vec<Vec<f64>>,
    pub vertices: Vec<Vec<Vec3>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<FitDiagnostics>,
}

impl AnimationClip {
    /// Poses every frame of `poses` with `model`.
    pub fn from_poses(model: &AnimModel, poses: Vec<Vec<f64>>) -> Result<Self, FitError> {
        let vertices = poses.iter().map(|p| model.apply(p)).collect::<Result<Vec<_>, _>>()?;
        Ok(AnimationClip {
            format: CLIP_FORMAT.into(),
            version: CLIP_VERSION,
            model: model.kind().into(),
            poses,
            vertices,
            diagnostics: None,
        })
    }

    pub fn frames(&self) -> usize {
        self.poses.len()
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), FitError> {
        let path = path.as_ref();
        let text = serde_json::to_string(self).expect("clip serializes");
        std::fs::write(path, text).map_err(|source| FitError::Io { path: path.display().to_string(), source })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, FitError> {
        let path = path.as_ref();
        let p = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| FitError::Io { path: p.clone(), source })?;
        let clip: AnimationClip = serde_json::from_str(&text).map_err(|e| FitError::Parse { path: p.clone(), message: e.to_string() })?;
        if clip.format != CLIP_FORMAT || clip.version != CLIP_VERSION {
            return Err(FitError::Parse { path: p, message: format!("unsupported clip {} v{}", clip.format, clip.version) });
        }
        if clip.vertices.len() != clip.poses.len() {
            return Err(FitError::Parse { path: p, message: "pose and vertex frame counts differ".into() });
        }
        Ok(clip)
    }
}

/// Builds the rendering target: every frame of `fv`, per-vertex features
/// projected from the reference frame, and the reference frame with its
/// foreground replaced by the mean background feature. The foreground is
/// the stored mask, or else the rest mesh's coverage.
pub fn render_target(mesh: &Mesh, fv: &FeatureVideo, camera: &Camera, mode: LossMode) -> Result<RenderTarget, FitError> {
    fv.validate().map_err(FitError::Shape)?;
    let cam = camera.rescaled(fv.width, fv.height);
    let mask = match &fv.mask {
        Some(m) => m.clone(),
        None => render_depth_mask(mesh, &cam).mask,
    };
    let background = inpaint_background_features(&fv.reference_frame(), &mask)?;
    let vf = project_features_to_vertices(fv, mesh, camera);
    let targets = (0..fv.frames).map(|l| fv.frame(l)).collect();
    RenderTarget::new(Rc::new(mesh.faces().to_vec()), &cam, vf.features, background, targets, mode)
}

impl RenderTarget {
    /// Mean cosine similarity between the rendering of `vertices` and
    /// target `frame` over covered pixels; 1 when nothing is covered.
    pub fn consistency(&self, faces: &[[usize; 3]], vertices: &[Vec3], frame: usize) -> f64 {
        let bg = self.background();
        let d = bg.channels;
        let r = rasterize(project_vertices(vertices, self.camera()), faces, bg.width, bg.height);
        let t = &self.targets()[frame];
        let mut buf = vec![0.0; d];
        let (mut acc, mut count) = (0.0, 0usize);
        for p in 0..r.face.len() {
            if r.covered(p) {
                r.interpolate(faces, self.vertex_features(), d, p, &mut buf);
                acc += cosine(&buf, &t.data[p * d..(p + 1) * d]);
                count += 1;
            }
        }
        if count == 0 {
            1.0
        } else {
            acc / count as f64
        }
    }
}

/// Cosine agreement between the rest mesh rendered with its own projected
/// features and the reference frame, on covered pixels.
pub fn reference_consistency(mesh: &Mesh, fv: &FeatureVideo, camera: &Camera) -> Result<f64, FitError> {
    let target = render_target(mesh, fv, camera, LossMode::Cosine)?;
    Ok(target.consistency(mesh.faces(), mesh.vertices(), fv.reference))
}

struct Objective<'a> {
    model: Rc<AnimModel>,
    target: Rc<RenderTarget>,
    camera: &'a Camera,
    config: &'a FitConfig,
    p_init: Vec<f64>,
    vertices: usize,
}

impl Objective<'_> {
    /// Weighted loss of the first `frames` frames; also returns the
    /// unweighted terms and the pose parameters.
    fn evaluate<'t>(&self, tape: &'t Tape, weights: &[Var<'t>], inputs: Var<'t>) -> Result<(Var<'t>, LossComponents, Var<'t>), FitError> {
        let frames = inputs.shape()[0];
        let p = self.p_init.len();
        let n = self.vertices as f64;
        let offsets = PoseRegressor::forward(weights, inputs).scale(self.config.alpha);
        let init = Tensor::from_shape(&[frames, p], self.p_init.iter().copied().cycle().take(frames * p).collect());
        let params = offsets.add_const(&init);
        let posed = pose_op(Rc::clone(&self.model), params)?;
        let render = render_loss_op(Rc::clone(&self.target), posed);
        let depth = depth_loss_op(posed, self.camera);
        let smooth = if frames >= 2 {
            offsets.rows(1, frames - 1).sub(offsets.rows(0, frames - 1)).l1().scale(1.0 / ((frames - 1) as f64 * n))
        } else {
            tape.constant(Tensor::scalar(0.0))
        };
        let fidelity = offsets.l1().scale(1.0 / (frames as f64 * n));
        let c = self.config;
        let mut total = render.scale(c.w_render).add(depth.scale(c.w_depth)).add(smooth.scale(c.w_smooth)).add(fidelity.scale(c.w_fidelity));
        let mut jacobian = None;
        if let Some(jp) = self.model.jacobian_params() {
            let j = jacobian_loss_op(offsets, jp);
            jacobian = Some(j.item());
            total = total.add(j.scale(c.w_jacobian));
        }
        let components = LossComponents { render: render.item(), depth: depth.item(), smooth: smooth.item(), fidelity: fidelity.item(), jacobian };
        Ok((total, components, params))
    }
}

fn encodings(frames: usize, order: usize) -> Vec<f64> {
    (0..frames).flat_map(|l| frame_encoding(l, frames, order)).collect()
}

/// Fits per-frame poses of `model` to `fv`; see [`fit_motion_with`].
pub fn fit_motion(model: &AnimModel, fv: &FeatureVideo, camera: &Camera, config: &FitConfig) -> Result<AnimationClip, FitError> {
    fit_motion_with(model, fv, camera, config, |_| {})
}

/// Runs `config.iterations` Adam steps on the regressor weights, growing
/// the active frames by the warm-up schedule, and calls `observer` after
/// every step. The clip holds all frames posed by the final weights.
pub fn fit_motion_with(
    model: &AnimModel,
    fv: &FeatureVideo,
    camera: &Camera,
    config: &FitConfig,
    mut observer: impl FnMut(&IterationRecord),
) -> Result<AnimationClip, FitError> {
    let start = Instant::now();
    config.validate().map_err(FitError::Config)?;
    let frames = fv.frames;
    if config.w_smooth > 0.0 && frames < 2 {
        return Err(FitError::TooFewFrames(frames));
    }
    let target = Rc::new(render_target(model.rest(), fv, camera, config.loss_mode)?);
    let objective = Objective {
        model: Rc::new(model.clone()),
        target,
        camera,
        config,
        p_init: model.p_init(),
        vertices: model.rest().vertex_count(),
    };
    let width = 2 * config.encoding_order + 1;
    let enc = encodings(frames, config.encoding_order);
    let mut regressor = PoseRegressor::new(width, config.hidden, config.layers, model.param_count(), config.seed);
    let adam_config = AdamConfig { learning_rate: config.learning_rate, eps: config.adam_eps, ..AdamConfig::default() };
    let mut adam = AdamState::new(adam_config, regressor.params());
    let mut history = Vec::with_capacity(config.iterations);

    for iteration in 0..config.iterations {
        let active = config.active_frames(iteration, frames);
        let tape = Tape::new();
        let weights = regressor.bind(&tape);
        let inputs = tape.constant(Tensor::from_shape(&[active, width], enc[..active * width].to_vec()));
        let (total, losses, _) = objective.evaluate(&tape, &weights, inputs)?;
        let value = total.item();
        if !value.is_finite() {
            return Err(FitError::NonFinite { iteration });
        }
        let grads = tape.backward(total).map_err(|_| FitError::NonFinite { iteration })?;
        let grads: Vec<Tensor> = weights.iter().map(|w| grads.wrt(*w).clone()).collect();
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(FitError::NonFinite { iteration });
        }
        adam_step(regressor.params_mut(), &grads, &mut adam).map_err(|_| FitError::NonFinite { iteration })?;
        let record = IterationRecord { iteration, active_frames: active, total: value, losses };
        observer(&record);
        history.push(record);
    }

    let tape = Tape::new();
    let weights: Vec<Var> = regressor.params().iter().map(|p| tape.constant(p.clone())).collect();
    let inputs = tape.constant(Tensor::from_shape(&[frames, width], enc));
    let (total, final_losses, params) = objective.evaluate(&tape, &weights, inputs)?;
    if !total.item().is_finite() {
        return Err(FitError::NonFinite { iteration: config.iterations });
    }
    let p = model.param_count();
    let poses = params.value().data().chunks(p).map(|c| c.to_vec()).collect();
    let mut clip = AnimationClip::from_poses(model, poses)?;
    clip.diagnostics = Some(FitDiagnostics {
        loss_mode: config.loss_mode,
        iterations: config.iterations,
        final_losses,
        final_total: total.item(),
        wall_time_s: start.elapsed().as_secs_f64(),
        history,
    });
    Ok(clip)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anim::SkeletalLBS;
    use crate::autodiff::finite_diff_check;
    use crate::raster::rasterize_features;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn strip() -> Mesh {
        let k = 6;
        let mut v = Vec::new();
        for i in 0..k {
            for j in 0..k {
                let (x, y) = (-1.0 + 0.4 * j as f64, -0.7 + 0.28 * i as f64);
                v.push([x, y, 0.1 * (x * y).sin()]);
            }
        }
        let mut f = Vec::new();
        for i in 0..k - 1 {
            for j in 0..k - 1 {
                let a = i * k + j;
                f.push([a, a + 1, a + k]);
                f.push([a + 1, a + k + 1, a + k]);
            }
        }
        Mesh::new(v, f).unwrap()
    }

    fn camera() -> Camera {
        Camera::at_center(50.0, 50.0, 39.5, 23.5, [0.0, 0.0, -4.0], 80, 48).unwrap()
    }

    fn smooth_features(mesh: &Mesh, d: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dirs: Vec<[f64; 4]> = (0..d).map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(0.0..6.3)]).collect();
        mesh.vertices()
            .iter()
            .flat_map(|v| {
                let raw: Vec<f64> = dirs.iter().map(|k| (k[0] * v[0] + k[1] * v[1] + k[2] * v[2] + k[3]).sin()).collect();
                let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
                raw.into_iter().map(move |x| x / norm)
            })
            .collect()
    }

    fn static_video(mesh: &Mesh, cam: &Camera, frames: usize) -> FeatureVideo {
        let d = 6;
        let feats = smooth_features(mesh, d, 2);
        let bg = crate::mesh::FeatureMap::new(48, 80, d, (0..48 * 80).flat_map(|p| (0..d).map(move |c| ((p * 7 + c * 3) % 11) as f64 / 11.0 - 0.5)).collect());
        let img = rasterize_features(mesh, cam, &feats, &bg).unwrap().features;
        FeatureVideo::from_frames(&vec![img; frames]).unwrap()
    }

    fn small_config() -> FitConfig {
        FitConfig { hidden: 32, layers: 3, iterations: 60, warmup_end: 30, ..FitConfig::default() }
    }

    #[test]
    fn static_target_gives_near_zero_offsets() {
        let mesh = strip();
        let cam = camera();
        let model = AnimModel::Skeletal(SkeletalLBS::rigid(mesh.clone()));
        let fv = static_video(&mesh, &cam, 4);
        let config = FitConfig { iterations: 200, warmup_end: 100, ..small_config() };
        let clip = fit_motion(&model, &fv, &cam, &config).unwrap();
        assert_eq!(clip.frames(), 4);
        let mean_l1 = clip.poses.iter().map(|p| p.iter().map(|x| x.abs()).sum::<f64>()).sum::<f64>() / 4.0;
        assert!(mean_l1 < config.alpha, "{mean_l1}");
        let target = render_target(&mesh, &fv, &cam, LossMode::Cosine).unwrap();
        assert!(target.consistency(mesh.faces(), &clip.vertices[0], 0) >= 0.99);
        let diag = clip.diagnostics.unwrap();
        assert_eq!(diag.history.len(), 200);
        assert_eq!(diag.history[0].active_frames, 1);
        assert_eq!(diag.history[199].active_frames, 4);
    }

    #[test]
    fn fit_is_deterministic() {
        let mesh = strip();
        let cam = camera();
        let model = AnimModel::Skeletal(SkeletalLBS::rigid(mesh.clone()));
        let fv = static_video(&mesh, &cam, 3);
        let a = fit_motion(&model, &fv, &cam, &small_config()).unwrap();
        let b = fit_motion(&model, &fv, &cam, &small_config()).unwrap();
        assert_eq!(a.poses, b.poses);
        assert_eq!(a.vertices, b.vertices);
        let c = fit_motion(&model, &fv, &cam, &FitConfig { seed: 1, ..small_config() }).unwrap();
        assert_ne!(a.poses, c.poses);
    }

    #[test]
    fn clip_vertices_follow_poses_and_round_trip() {
        let mesh = strip();
        let cam = camera();
        let model = AnimModel::Skeletal(SkeletalLBS::rigid(mesh.clone()));
        let fv = static_video(&mesh, &cam, 2);
        let clip = fit_motion(&model, &fv, &cam, &FitConfig { loss_mode: LossMode::Mse, ..small_config() }).unwrap();
        for (p, v) in clip.poses.iter().zip(&clip.vertices) {
            assert_eq!(&model.apply(p).unwrap(), v);
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.json");
        clip.write(&path).unwrap();
        let back = AnimationClip::read(&path).unwrap();
        assert_eq!(back.poses, clip.poses);
        assert_eq!(back.vertices, clip.vertices);
        assert_eq!(back.diagnostics.as_ref().unwrap().loss_mode, LossMode::Mse);
    }

    #[test]
    fn too_few_frames_for_smoothness() {
        let mesh = strip();
        let cam = camera();
        let model = AnimModel::Skeletal(SkeletalLBS::rigid(mesh.clone()));
        let fv = static_video(&mesh, &cam, 1);
        assert!(matches!(fit_motion(&model, &fv, &cam, &small_config()), Err(FitError::TooFewFrames(1))));
        let config = FitConfig { w_smooth: 0.0, ..small_config() };
        assert_eq!(fit_motion(&model, &fv, &cam, &config).unwrap().frames(), 1);
    }

    #[test]
    fn non_finite_loss_reports_iteration() {
        let mesh = strip();
        let cam = camera();
        let model = AnimModel::Skeletal(SkeletalLBS::rigid(mesh.clone()));
        let fv = static_video(&mesh, &cam, 2);
        let config = FitConfig { learning_rate: 1e300, ..small_config() };
        assert!(matches!(fit_motion(&model, &fv, &cam, &config), Err(FitError::NonFinite { .. })));
    }

    #[test]
    fn reference_consistency_of_exact_rendering() {
        let mesh = strip();
        let cam = camera();
        let fv = static_video(&mesh, &cam, 2);
        assert!(reference_consistency(&mesh, &fv, &cam).unwrap() > 0.99);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut noise = fv.clone();
        noise.data.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
        assert!(reference_consistency(&mesh, &noise, &cam).unwrap() < 0.95);
    }

    #[test]
    fn full_pipeline_gradcheck() {
        let mesh = strip();
        let cam = camera();
        let model = AnimModel::Skeletal(SkeletalLBS::rigid(mesh.clone()));
        let mut fv = static_video(&mesh, &cam, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let skip = fv.frame_len();
        fv.data.iter_mut().skip(skip).for_each(|x| *x += rng.random_range(-0.3f32..0.3));
        let config = FitConfig::default();
        let objective = Objective {
            model: Rc::new(model.clone()),
            target: Rc::new(render_target(&mesh, &fv, &cam, LossMode::Cosine).unwrap()),
            camera: &cam,
            config: &config,
            p_init: model.p_init(),
            vertices: mesh.vertex_count(),
        };
        let reg = PoseRegressor::new(13, 8, 2, model.param_count(), 3);
        let last = reg.params()[2].clone();
        let w0 = reg.params()[0].clone();
        let b0 = reg.params()[1].clone();
        let b1 = reg.params()[3].clone();
        let enc = encodings(2, 6);
        let point = Tensor::from_shape(last.shape(), last.data().iter().map(|x| x * 3e3).collect());
        let err = finite_diff_check(
            |tape, w| {
                let ws = vec![tape.constant(w0.clone()), tape.constant(b0.clone()), w, tape.constant(b1.clone())];
                let x = tape.constant(Tensor::from_shape(&[2, 13], enc.clone()));
                objective.evaluate(tape, &ws, x).unwrap().0
            },
            &point,
            1e-4,
        );
        assert!(err < 1e-3, "{err}");
    }
}
