//! Pose-error metrics and the synthetic ground-truth scenario generator.

mod metrics;
mod scenario;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use metrics::{accel_error, mpjpe, pa_mpjpe, procrustes_align, procrustes_transform, pve, FrameErrors, Similarity, ACCEL_SCALE, RANK_TOLERANCE};
pub use scenario::{generate_scenario, perturb_features, SyntheticScenario, BONE_LENGTH, FEATURE_SIZE, IMAGE_SIZE, RING_SEGMENTS, TUBE_RADIUS};

use crate::anim::{AnimError, AnimModel};
use crate::fitting::AnimationClip;
use crate::mesh::Vec3;
use crate::raster::RasterError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("degenerate alignment: {0}")]
    Degenerate(String),
    #[error("acceleration needs at least 3 frames, got {0}")]
    TooFewFrames(usize),
    #[error("scenario leaves the camera frustum: {0}")]
    Frustum(String),
    #[error("invalid scenario parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Anim(#[from] AnimError),
    #[error(transparent)]
    Raster(#[from] RasterError),
}

/// Errors of a predicted clip against ground truth, in world units. Joint
/// metrics are absent for models without joints; Accel is absent below 3
/// frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseErrorReport {
    pub frames: usize,
    pub mpjpe: Option<f64>,
    pub pa_mpjpe: Option<f64>,
    pub pve: f64,
    /// World units per squared frame, times [`ACCEL_SCALE`].
    pub accel: Option<f64>,
    /// Rest-mesh bounding-box diagonal, for normalization.
    pub bbox_diagonal: f64,
    pub per_frame: Vec<FrameErrors>,
}

impl PoseErrorReport {
    /// Line-oriented `key=value` rendering of the summary and every frame.
    pub fn to_lines(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("na".to_string(), |x| format!("{x:.12e}"));
        let mut s = format!(
            "summary frames={} mpjpe={} pa_mpjpe={} pve={:.12e} accel={} bbox_diagonal={:.12e}\n",
            self.frames,
            opt(self.mpjpe),
            opt(self.pa_mpjpe),
            self.pve,
            opt(self.accel),
            self.bbox_diagonal
        );
        for f in &self.per_frame {
            s += &format!("frame={} mpjpe={} pa_mpjpe={} pve={:.12e}\n", f.frame, opt(f.mpjpe), opt(f.pa_mpjpe), f.pve);
        }
        s
    }
}

fn joints_of(model: &AnimModel, clip: &AnimationClip) -> Option<Result<Vec<Vec<Vec3>>, EvalError>> {
    let mut out = Vec::with_capacity(clip.frames());
    for p in &clip.poses {
        match model.joints(p)? {
            Ok(j) => out.push(j),
            Err(e) => return Some(Err(e.into())),
        }
    }
    Some(Ok(out))
}

/// Compares `pred` with `gt`, both posed by `model`.
pub fn evaluate_clip(model: &AnimModel, pred: &AnimationClip, gt: &AnimationClip) -> Result<PoseErrorReport, EvalError> {
    if pred.frames() != gt.frames() {
        return Err(EvalError::Shape(format!("{} predicted frames vs {} ground-truth frames", pred.frames(), gt.frames())));
    }
    let pred_v = pred.poses.iter().map(|p| model.apply(p)).collect::<Result<Vec<_>, _>>()?;
    let gt_v = gt.poses.iter().map(|p| model.apply(p)).collect::<Result<Vec<_>, _>>()?;
    let joints = match (joints_of(model, pred), joints_of(model, gt)) {
        (Some(p), Some(g)) => Some((p?, g?)),
        _ => None,
    };
    let pve = pve(&pred_v, &gt_v)?;
    let (mpjpe_v, pa, accel) = match &joints {
        Some((p, g)) => {
            let pa = match pa_mpjpe(p, g) {
                Ok(v) => Some(v),
                Err(EvalError::Degenerate(_)) => None,
                Err(e) => return Err(e),
            };
            let accel = if p.len() >= 3 { Some(accel_error(p, g)?) } else { None };
            (Some(mpjpe(p, g)?), pa, accel)
        }
        None => (None, None, if pred_v.len() >= 3 { Some(accel_error(&pred_v, &gt_v)?) } else { None }),
    };
    let per_frame = (0..pred.frames())
        .map(|l| metrics::frame_errors(joints.as_ref().map(|(p, g)| (p[l].as_slice(), g[l].as_slice())), &pred_v[l], &gt_v[l], l))
        .collect();
    Ok(PoseErrorReport {
        frames: pred.frames(),
        mpjpe: mpjpe_v,
        pa_mpjpe: pa,
        pve,
        accel,
        bbox_diagonal: model.rest().bbox_diagonal(),
        per_frame,
    })
}
