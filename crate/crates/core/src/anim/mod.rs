//! Pose parameterizations `τ(M, p)`: skeletal skinning, blendshapes and
//! Jacobian fields, each with a global rigid part.
//!
//! Every model's parameter vector is zero at the rest pose, and every model
//! scales its raw global translation by [`TRANSLATION_SCALE`].

mod blendshape;
mod jacobian;
mod rig;
pub mod rotation;
mod skeletal;

use std::rc::Rc;

pub use blendshape::{random_orthonormal_basis, Blendshape, DEFAULT_EXPRESSION_SCALE};
pub use jacobian::{JacobianField, PINNED_VERTEX};
pub use rig::{load_rig, read_basis, write_basis, BasisRef, BoneSpec, EndSiteSpec, ModelSpec, Rig, RigFile, SkeletonSpec, RIG_FORMAT, RIG_VERSION};
pub use rotation::{rotation_from_params, Mat3};
pub use skeletal::{Bone, EndSite, RigidTransform, SkeletalLBS};

use crate::autodiff::{Tensor, Var};
use crate::mesh::{Mesh, Vec3};
use thiserror::Error;

/// Multiplier applied to the raw global translation parameters.
pub const TRANSLATION_SCALE: f64 = 0.1;

#[derive(Debug, Error)]
pub enum AnimError {
    #[error("pose vector has {got} entries, the model expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid rig: {0}")]
    InvalidRig(String),
    #[error("singular Poisson system: {0}")]
    Singular(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
}

/// Any supported pose model.
#[derive(Debug, Clone)]
pub enum AnimModel {
    Skeletal(SkeletalLBS),
    Blendshape(Blendshape),
    JacobianField(JacobianField),
}

impl AnimModel {
    pub fn kind(&self) -> &'static str {
        match self {
            AnimModel::Skeletal(_) => "skeletal",
            AnimModel::Blendshape(_) => "blendshape",
            AnimModel::JacobianField(_) => "jacobian_field",
        }
    }

    pub fn rest(&self) -> &Mesh {
        match self {
            AnimModel::Skeletal(m) => m.rest(),
            AnimModel::Blendshape(m) => m.rest(),
            AnimModel::JacobianField(m) => m.rest(),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            AnimModel::Skeletal(m) => m.param_count(),
            AnimModel::Blendshape(m) => m.param_count(),
            AnimModel::JacobianField(m) => m.param_count(),
        }
    }

    pub fn p_init(&self) -> Vec<f64> {
        vec![0.0; self.param_count()]
    }

    /// Number of leading parameters holding `J_f − I` offsets, for the
    /// Jacobian regularizer.
    pub fn jacobian_params(&self) -> Option<usize> {
        match self {
            AnimModel::JacobianField(m) => Some(9 * m.face_count()),
            _ => None,
        }
    }

    pub fn apply(&self, p: &[f64]) -> Result<Vec<Vec3>, AnimError> {
        match self {
            AnimModel::Skeletal(m) => m.apply(p),
            AnimModel::Blendshape(m) => m.apply(p),
            AnimModel::JacobianField(m) => m.apply(p),
        }
    }

    pub fn apply_pose(&self, p: &[f64]) -> Result<Mesh, AnimError> {
        Ok(self.rest().with_vertices(self.apply(p)?))
    }

    /// `∂L/∂p` given `∂L/∂vertices`.
    pub fn apply_vjp(&self, p: &[f64], grad: &[Vec3]) -> Vec<f64> {
        match self {
            AnimModel::Skeletal(m) => m.skin_vjp(m.rest().vertices(), p, grad, None),
            AnimModel::Blendshape(m) => m.apply_vjp(p, grad),
            AnimModel::JacobianField(m) => m.apply_vjp(p, grad),
        }
    }

    /// Joint positions for kinematic models; `None` for Jacobian fields.
    pub fn joints(&self, p: &[f64]) -> Option<Result<Vec<Vec3>, AnimError>> {
        match self {
            AnimModel::Skeletal(m) => Some(m.joints(p)),
            AnimModel::Blendshape(m) => Some(m.joints(p)),
            AnimModel::JacobianField(_) => None,
        }
    }
}

/// Poses a batch on a tape: `params` is `F×P`, the result `F×N×3`.
pub fn pose_op<'t>(model: Rc<AnimModel>, params: Var<'t>) -> Result<Var<'t>, AnimError> {
    let pv = params.value();
    let p = model.param_count();
    if pv.last_dim() != p {
        return Err(AnimError::Dimension { expected: p, got: pv.last_dim() });
    }
    let frames = pv.len() / p;
    let n = model.rest().vertex_count();
    let mut out = Vec::with_capacity(frames * n * 3);
    for f in 0..frames {
        out.extend(model.apply(&pv.data()[f * p..(f + 1) * p])?.into_iter().flatten());
    }
    let tape = params.tape();
    Ok(tape.custom(&[params], Tensor::from_shape(&[frames, n, 3], out), move |g, inp, _| {
        let pd = inp[0].data();
        let mut grad = Vec::with_capacity(frames * p);
        for f in 0..frames {
            let gv: Vec<Vec3> = g.data()[f * n * 3..(f + 1) * n * 3].chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
            grad.extend(model.apply_vjp(&pd[f * p..(f + 1) * p], &gv));
        }
        vec![Tensor::from_shape(inp[0].shape(), grad)]
    }))
}
