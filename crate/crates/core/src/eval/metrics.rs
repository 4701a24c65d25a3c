use nalgebra::{Matrix3, Vector3};

use super::EvalError;
use crate::mesh::Vec3;

/// Multiplier applied to acceleration errors.
pub const ACCEL_SCALE: f64 = 1e3;

/// Second singular value of the centered prediction, relative to the first,
/// below which a point set counts as collinear.
pub const RANK_TOLERANCE: f64 = 1e-10;

fn check_shapes(pred: &[Vec<Vec3>], gt: &[Vec<Vec3>]) -> Result<(), EvalError> {
    if pred.len() != gt.len() {
        return Err(EvalError::Shape(format!("{} predicted frames vs {} ground-truth frames", pred.len(), gt.len())));
    }
    if pred.is_empty() {
        return Err(EvalError::Shape("no frames".into()));
    }
    for (l, (p, g)) in pred.iter().zip(gt).enumerate() {
        if p.len() != g.len() || p.is_empty() {
            return Err(EvalError::Shape(format!("frame {l}: {} predicted points vs {} ground-truth points", p.len(), g.len())));
        }
    }
    Ok(())
}

fn dist(a: Vec3, b: Vec3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn mean_distance(p: &[Vec3], g: &[Vec3]) -> f64 {
    p.iter().zip(g).map(|(&a, &b)| dist(a, b)).sum::<f64>() / p.len() as f64
}

/// Mean Euclidean distance over frames and joints; inputs are `L×J`.
pub fn mpjpe(pred: &[Vec<Vec3>], gt: &[Vec<Vec3>]) -> Result<f64, EvalError> {
    check_shapes(pred, gt)?;
    let total: usize = pred.iter().map(Vec::len).sum();
    Ok(pred.iter().zip(gt).map(|(p, g)| p.iter().zip(g).map(|(&a, &b)| dist(a, b)).sum::<f64>()).sum::<f64>() / total as f64)
}

/// [`mpjpe`] over vertices.
pub fn pve(pred: &[Vec<Vec3>], gt: &[Vec<Vec3>]) -> Result<f64, EvalError> {
    mpjpe(pred, gt)
}

/// Similarity transform `x ↦ s·R·x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: [[f64; 3]; 3],
    pub translation: Vec3,
}

impl Similarity {
    pub fn apply(&self, x: Vec3) -> Vec3 {
        let r = &self.rotation;
        let mut out = self.translation;
        for i in 0..3 {
            out[i] += self.scale * (r[i][0] * x[0] + r[i][1] * x[1] + r[i][2] * x[2]);
        }
        out
    }
}

/// Least-squares similarity mapping `pred` onto `gt`, reflections excluded.
pub fn procrustes_transform(pred: &[Vec3], gt: &[Vec3]) -> Result<Similarity, EvalError> {
    if pred.len() != gt.len() {
        return Err(EvalError::Shape(format!("{} predicted points vs {} ground-truth points", pred.len(), gt.len())));
    }
    if pred.len() < 3 {
        return Err(EvalError::Degenerate(format!("{} points; alignment needs at least 3", pred.len())));
    }
    let n = pred.len() as f64;
    let to_v = |p: &Vec3| Vector3::new(p[0], p[1], p[2]);
    let mu_x = pred.iter().map(to_v).sum::<Vector3<f64>>() / n;
    let mu_y = gt.iter().map(to_v).sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    let mut scatter = Matrix3::zeros();
    let mut var_x = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        let x = to_v(p) - mu_x;
        let y = to_v(g) - mu_y;
        cov += y * x.transpose();
        scatter += x * x.transpose();
        var_x += x.norm_squared();
    }
    let sv = scatter.symmetric_eigenvalues();
    let mut s = [sv[0].max(0.0).sqrt(), sv[1].max(0.0).sqrt(), sv[2].max(0.0).sqrt()];
    s.sort_by(|a, b| b.total_cmp(a));
    if !(s[0] > 0.0) || s[1] <= RANK_TOLERANCE * s[0] {
        return Err(EvalError::Degenerate("predicted points are coincident or collinear".into()));
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let d = if (u * v_t).determinant() < 0.0 { -1.0 } else { 1.0 };
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut diag = Vector3::new(1.0, 1.0, 1.0);
    diag[order[2]] = d;
    let r = u * Matrix3::from_diagonal(&diag) * v_t;
    let trace: f64 = (0..3).map(|i| svd.singular_values[i] * diag[i]).sum();
    let scale = trace / var_x;
    let t = mu_y - scale * r * mu_x;
    let mut rotation = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            rotation[i][j] = r[(i, j)];
        }
    }
    Ok(Similarity { scale, rotation, translation: [t[0], t[1], t[2]] })
}

/// `pred` after its optimal similarity alignment onto `gt`.
pub fn procrustes_align(pred: &[Vec3], gt: &[Vec3]) -> Result<Vec<Vec3>, EvalError> {
    let s = procrustes_transform(pred, gt)?;
    Ok(pred.iter().map(|&x| s.apply(x)).collect())
}

/// [`mpjpe`] after aligning every frame separately.
pub fn pa_mpjpe(pred: &[Vec<Vec3>], gt: &[Vec<Vec3>]) -> Result<f64, EvalError> {
    check_shapes(pred, gt)?;
    let aligned = pred.iter().zip(gt).map(|(p, g)| procrustes_align(p, g)).collect::<Result<Vec<_>, _>>()?;
    mpjpe(&aligned, gt)
}

/// Mean norm of the difference of second finite differences over interior
/// frames and joints, times [`ACCEL_SCALE`].
pub fn accel_error(pred: &[Vec<Vec3>], gt: &[Vec<Vec3>]) -> Result<f64, EvalError> {
    check_shapes(pred, gt)?;
    if pred.len() < 3 {
        return Err(EvalError::TooFewFrames(pred.len()));
    }
    let j = pred[0].len();
    if pred.iter().chain(gt).any(|f| f.len() != j) {
        return Err(EvalError::Shape("joint count varies across frames".into()));
    }
    let mut acc = 0.0;
    for l in 1..pred.len() - 1 {
        for k in 0..j {
            let mut e = [0.0; 3];
            for c in 0..3 {
                let ap = pred[l + 1][k][c] - 2.0 * pred[l][k][c] + pred[l - 1][k][c];
                let ag = gt[l + 1][k][c] - 2.0 * gt[l][k][c] + gt[l - 1][k][c];
                e[c] = ap - ag;
            }
            acc += (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]).sqrt();
        }
    }
    Ok(ACCEL_SCALE * acc / ((pred.len() - 2) * j) as f64)
}

/// Per-frame errors; PA-MPJPE is absent when the frame's joints are
/// degenerate.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FrameErrors {
    pub frame: usize,
    pub mpjpe: Option<f64>,
    pub pa_mpjpe: Option<f64>,
    pub pve: f64,
}

pub(crate) fn frame_errors(pred_j: Option<(&[Vec3], &[Vec3])>, pred_v: &[Vec3], gt_v: &[Vec3], frame: usize) -> FrameErrors {
    let (mpjpe, pa) = match pred_j {
        Some((p, g)) => (Some(mean_distance(p, g)), procrustes_align(p, g).ok().map(|a| mean_distance(&a, g))),
        None => (None, None),
    };
    FrameErrors { frame, mpjpe, pa_mpjpe: pa, pve: mean_distance(pred_v, gt_v) }
}
