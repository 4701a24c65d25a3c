//! Expression blendshapes followed by skinning.

use super::skeletal::SkeletalLBS;
use super::AnimError;
use crate::mesh::{Mesh, Vec3};

/// Default multiplier on expression coefficients.
pub const DEFAULT_EXPRESSION_SCALE: f64 = 5.0;

const ORTHONORMAL_TOLERANCE: f64 = 1e-4;

/// Rest mesh plus `scale · E c`, then skinned by an embedded skeleton.
///
/// Parameter layout: `K` expression coefficients, then the skeleton's
/// parameters. The zero vector is the rest pose.
#[derive(Debug, Clone)]
pub struct Blendshape {
    /// `3N×K`, row-major; row `3i + c` is coordinate `c` of vertex `i`.
    basis: Vec<f64>,
    components: usize,
    scale: f64,
    skeleton: SkeletalLBS,
}

impl Blendshape {
    /// `skeleton` defaults to a single rigid root bone.
    pub fn new(rest: Mesh, basis: Vec<f64>, components: usize, scale: f64, skeleton: Option<SkeletalLBS>) -> Result<Self, AnimError> {
        let rows = 3 * rest.vertex_count();
        if basis.len() != rows * components {
            return Err(AnimError::InvalidRig(format!("basis has {} entries, expected {rows}×{components}", basis.len())));
        }
        if !scale.is_finite() {
            return Err(AnimError::InvalidRig("expression scale is not finite".into()));
        }
        for a in 0..components {
            for b in a..components {
                let d: f64 = (0..rows).map(|r| basis[r * components + a] * basis[r * components + b]).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                if (d - want).abs() > ORTHONORMAL_TOLERANCE {
                    return Err(AnimError::InvalidRig(format!("basis columns {a} and {b} have inner product {d}")));
                }
            }
        }
        let skeleton = match skeleton {
            Some(s) => {
                if s.rest().vertices() != rest.vertices() || s.rest().faces() != rest.faces() {
                    return Err(AnimError::InvalidRig("skeleton rest mesh differs from the blendshape rest mesh".into()));
                }
                s
            }
            None => SkeletalLBS::rigid(rest),
        };
        Ok(Self { basis, components, scale, skeleton })
    }

    pub fn rest(&self) -> &Mesh {
        self.skeleton.rest()
    }

    pub fn skeleton(&self) -> &SkeletalLBS {
        &self.skeleton
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn basis(&self) -> &[f64] {
        &self.basis
    }

    pub fn param_count(&self) -> usize {
        self.components + self.skeleton.param_count()
    }

    /// Rest vertices displaced by `scale · E c`.
    pub fn expression(&self, coefficients: &[f64]) -> Vec<Vec3> {
        let k = self.components;
        self.rest()
            .vertices()
            .iter()
            .enumerate()
            .map(|(i, u)| {
                let mut out = *u;
                for (c, o) in out.iter_mut().enumerate() {
                    let row = &self.basis[(3 * i + c) * k..(3 * i + c + 1) * k];
                    let off: f64 = row.iter().zip(coefficients).map(|(e, x)| e * x).sum();
                    *o += self.scale * off;
                }
                out
            })
            .collect()
    }

    pub fn apply(&self, p: &[f64]) -> Result<Vec<Vec3>, AnimError> {
        if p.len() != self.param_count() {
            return Err(AnimError::Dimension { expected: self.param_count(), got: p.len() });
        }
        let base = self.expression(&p[..self.components]);
        Ok(self.skeleton.skin(&base, &p[self.components..]))
    }

    pub fn joints(&self, p: &[f64]) -> Result<Vec<Vec3>, AnimError> {
        if p.len() != self.param_count() {
            return Err(AnimError::Dimension { expected: self.param_count(), got: p.len() });
        }
        self.skeleton.joints(&p[self.components..])
    }

    pub fn apply_vjp(&self, p: &[f64], grad: &[Vec3]) -> Vec<f64> {
        let k = self.components;
        let base = self.expression(&p[..k]);
        let mut g_base = vec![[0.0; 3]; base.len()];
        let g_skel = self.skeleton.skin_vjp(&base, &p[k..], grad, Some(&mut g_base));
        let mut out = vec![0.0; k];
        for (i, g) in g_base.iter().enumerate() {
            for c in 0..3 {
                let row = &self.basis[(3 * i + c) * k..(3 * i + c + 1) * k];
                for (o, e) in out.iter_mut().zip(row) {
                    *o += self.scale * e * g[c];
                }
            }
        }
        out.extend(g_skel);
        out
    }
}

/// A random orthonormal `3N×K` basis (Gram-Schmidt on Gaussian columns).
pub fn random_orthonormal_basis(rows: usize, components: usize, rng: &mut impl rand::Rng) -> Vec<f64> {
    use rand_distr::{Distribution, StandardNormal};
    assert!(components <= rows);
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(components);
    while cols.len() < components {
        let mut v: Vec<f64> = (0..rows).map(|_| StandardNormal.sample(rng)).collect();
        for _ in 0..2 {
            for c in &cols {
                let d: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(c).for_each(|(a, b)| *a -= d * b);
            }
        }
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-8 {
            cols.push(v.into_iter().map(|a| a / n).collect());
        }
    }
    let mut out = vec![0.0; rows * components];
    for (k, c) in cols.iter().enumerate() {
        for r in 0..rows {
            out[r * components + k] = c[r];
        }
    }
    out
}
