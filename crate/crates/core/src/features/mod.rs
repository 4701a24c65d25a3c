//! Feature videos, their file format, projective texturing of the reference
//! frame onto mesh vertices, background inpainting and reference-frame
//! selection.

mod ftrv;

pub use ftrv::{decode_ftrv, encode_ftrv, read_ftrv, read_step_archive, write_ftrv, write_step_archive, FtrvError, MAGIC, VERSION};

use crate::autodiff::ops::cosine;
use crate::mesh::{masked_bilinear_sample, Camera, FeatureMap, Mesh};
use crate::raster::render_depth_mask;
use thiserror::Error;

/// Relative depth slack of the self-occlusion test, in units of the mesh
/// bounding-box diagonal.
pub const VISIBILITY_SLACK: f64 = 1e-4;

/// Standard deviations below this count as zero spread when z-scoring.
pub const ZERO_SPREAD: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("reference-frame selection needs at least 2 recorded steps, got {0}")]
    TooFewSteps(usize),
    #[error("step {step} has shape {got:?}, expected {expected:?}")]
    StepShape { step: usize, expected: [usize; 4], got: [usize; 4] },
    #[error("mask has {got} entries for a {expected}-pixel frame")]
    MaskSize { expected: usize, got: usize },
}

/// `L×H×W×D` descriptor tensor stored as `f32`, frame-major, row-major,
/// channel-last.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVideo {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
    /// Frame depicting the mesh at its initial pose.
    pub reference: usize,
    /// Foreground mask of the reference frame, `H×W`.
    pub mask: Option<Vec<bool>>,
    /// Producer description (layer, step, model).
    pub metadata: String,
}

impl FeatureVideo {
    pub fn new(frames: usize, height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self, String> {
        let fv = FeatureVideo { frames, height, width, channels, data, reference: 0, mask: None, metadata: String::new() };
        fv.validate()?;
        Ok(fv)
    }

    /// Stacks equally shaped frames.
    pub fn from_frames(frames: &[FeatureMap]) -> Result<Self, String> {
        let first = frames.first().ok_or("a feature video needs at least one frame")?;
        let (h, w, d) = (first.height, first.width, first.channels);
        if frames.iter().any(|f| (f.height, f.width, f.channels) != (h, w, d)) {
            return Err("frames differ in shape".into());
        }
        let data = frames.iter().flat_map(|f| f.data.iter().map(|&x| x as f32)).collect();
        Self::new(frames.len(), h, w, d, data)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.frames == 0 || self.height == 0 || self.width == 0 || self.channels == 0 {
            return Err(format!("empty shape {:?}", self.shape()));
        }
        let n = self.frames.checked_mul(self.frame_len()).ok_or("shape overflows")?;
        if self.data.len() != n {
            return Err(format!("payload has {} values, shape {:?} needs {n}", self.data.len(), self.shape()));
        }
        if self.reference >= self.frames {
            return Err(format!("reference frame {} out of range for {} frames", self.reference, self.frames));
        }
        if let Some(m) = &self.mask {
            if m.len() != self.height * self.width {
                return Err(format!("mask has {} entries, expected {}", m.len(), self.height * self.width));
            }
        }
        if self.frames > u32::MAX as usize || self.height > u32::MAX as usize || self.width > u32::MAX as usize || self.channels > u32::MAX as usize {
            return Err("dimension exceeds u32".into());
        }
        Ok(())
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.frames, self.height, self.width, self.channels]
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn frame_f32(&self, l: usize) -> &[f32] {
        &self.data[l * self.frame_len()..(l + 1) * self.frame_len()]
    }

    /// Frame `l` widened to `f64`.
    pub fn frame(&self, l: usize) -> FeatureMap {
        FeatureMap::new(self.height, self.width, self.channels, self.frame_f32(l).iter().map(|&x| x as f64).collect())
    }

    pub fn reference_frame(&self) -> FeatureMap {
        self.frame(self.reference)
    }
}

/// Per-vertex descriptors sampled from the reference frame.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexFeatures {
    /// `N×D`, row-major.
    pub features: Vec<f64>,
    pub channels: usize,
    /// Informational only; every vertex is sampled regardless.
    pub visible: Vec<bool>,
}

/// Samples the reference frame at every vertex's projection. The camera is
/// rescaled from its own resolution to the feature resolution, so pixel
/// coordinates are multiplied by `(Ŵ/W, Ĥ/H)` before sampling. Texels
/// outside the foreground (the stored mask, else the rest mesh's coverage)
/// are left out of the bilinear stencil unless all four are.
///
/// Visibility comes from the stored mask when present, otherwise from a
/// rendered depth map: a vertex is visible when its depth is within
/// [`VISIBILITY_SLACK`]·diagonal of the nearest surface at its pixel.
pub fn project_features_to_vertices(fv: &FeatureVideo, mesh: &Mesh, camera: &Camera) -> VertexFeatures {
    let (h, w, d) = (fv.height, fv.width, fv.channels);
    let cam = camera.rescaled(w, h);
    let frame = fv.reference_frame();
    let depth = if fv.mask.is_none() { Some(render_depth_mask(mesh, &cam)) } else { None };
    let foreground: &[bool] = match (&fv.mask, &depth) {
        (Some(m), _) => m,
        (None, Some(dm)) => &dm.mask,
        (None, None) => unreachable!(),
    };
    let slack = VISIBILITY_SLACK * mesh.bbox_diagonal();
    let mut features = vec![0.0; mesh.vertex_count() * d];
    let mut visible = vec![false; mesh.vertex_count()];
    for (i, &v) in mesh.vertices().iter().enumerate() {
        let c = cam.to_camera_space(v);
        let (x, y) = cam.project_camera_space(c);
        masked_bilinear_sample(&frame.data, foreground, h, w, d, x, y, &mut features[i * d..(i + 1) * d]);
        if !(c[2] > 0.0) {
            continue;
        }
        let (px, py) = (x.round(), y.round());
        if !(px >= 0.0 && py >= 0.0 && px < w as f64 && py < h as f64) {
            continue;
        }
        let p = py as usize * w + px as usize;
        visible[i] = match (&fv.mask, &depth) {
            (Some(m), _) => m[p],
            (None, Some(dm)) => dm.mask[p] && c[2] <= dm.depth[p] + slack,
            (None, None) => unreachable!(),
        };
    }
    VertexFeatures { features, channels: d, visible }
}

/// Replaces foreground pixels with the per-channel mean of the background
/// pixels (the mean over the whole frame when nothing is background).
pub fn inpaint_background_features(frame: &FeatureMap, mask: &[bool]) -> Result<FeatureMap, FeatureError> {
    let (n, d) = (frame.height * frame.width, frame.channels);
    if mask.len() != n {
        return Err(FeatureError::MaskSize { expected: n, got: mask.len() });
    }
    let any_background = mask.iter().any(|&m| !m);
    let mut mean = vec![0.0; d];
    let mut count = 0usize;
    for p in 0..n {
        if !any_background || !mask[p] {
            for c in 0..d {
                mean[c] += frame.data[p * d + c];
            }
            count += 1;
        }
    }
    mean.iter_mut().for_each(|m| *m /= count as f64);
    let mut out = frame.clone();
    for p in 0..n {
        if mask[p] {
            out.data[p * d..(p + 1) * d].copy_from_slice(&mean);
        }
    }
    Ok(out)
}

/// Per-frame z-scored step-to-step cosine similarities summed over steps.
pub fn reference_frame_scores(steps: &[FeatureVideo]) -> Result<Vec<f64>, FeatureError> {
    if steps.len() < 2 {
        return Err(FeatureError::TooFewSteps(steps.len()));
    }
    let shape = steps[0].shape();
    for (t, s) in steps.iter().enumerate() {
        if s.shape() != shape {
            return Err(FeatureError::StepShape { step: t, expected: shape, got: s.shape() });
        }
    }
    let frames = shape[0];
    let mut scores = vec![0.0; frames];
    let mut prev_buf: Vec<Vec<f64>> = (0..frames).map(|l| steps[0].frame_f32(l).iter().map(|&x| x as f64).collect()).collect();
    for step in &steps[1..] {
        let mut kappa = Vec::with_capacity(frames);
        let mut cur_buf = Vec::with_capacity(frames);
        for (l, prev) in prev_buf.iter().enumerate() {
            let cur: Vec<f64> = step.frame_f32(l).iter().map(|&x| x as f64).collect();
            kappa.push(cosine(&cur, prev));
            cur_buf.push(cur);
        }
        let mu = kappa.iter().sum::<f64>() / frames as f64;
        let sigma = (kappa.iter().map(|k| (k - mu) * (k - mu)).sum::<f64>() / frames as f64).sqrt();
        if sigma >= ZERO_SPREAD {
            for (s, k) in scores.iter_mut().zip(&kappa) {
                *s += (k - mu) / sigma;
            }
        }
        prev_buf = cur_buf;
    }
    Ok(scores)
}

/// The frame whose features drift least across denoising steps; ties go to
/// the lowest index.
pub fn select_reference_frame(steps: &[FeatureVideo]) -> Result<usize, FeatureError> {
    let scores = reference_frame_scores(steps)?;
    let mut best = 0;
    for (l, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = l;
        }
    }
    Ok(best)
}
