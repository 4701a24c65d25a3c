//! Forward kinematics and linear blend skinning.

use super::rotation::{mat_mul, mat_t_vec, mat_vec, rotation_vjp, rotation_with_derivatives, transpose, Mat3, IDENTITY};
use super::{AnimError, TRANSLATION_SCALE};
use crate::mesh::{Mesh, Vec3};

/// A rigid transform `x ↦ R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl RigidTransform {
    pub const IDENTITY: RigidTransform = RigidTransform { rotation: IDENTITY, translation: [0.0; 3] };

    #[inline]
    pub fn apply(&self, x: Vec3) -> Vec3 {
        let r = mat_vec(&self.rotation, x);
        [r[0] + self.translation[0], r[1] + self.translation[1], r[2] + self.translation[2]]
    }

    pub fn compose(&self, inner: &RigidTransform) -> RigidTransform {
        RigidTransform { rotation: mat_mul(&self.rotation, &inner.rotation), translation: self.apply(inner.translation) }
    }
}

/// A bone of a kinematic tree. Bones are stored parents-first.
#[derive(Debug, Clone, PartialEq)]
pub struct Bone {
    pub name: String,
    pub parent: Option<usize>,
    /// Rest-pose pivot in world coordinates; bone axes are world-aligned at
    /// rest.
    pub head: Vec3,
}

/// An extra tracked point rigidly attached to a bone, such as a chain tip.
#[derive(Debug, Clone, PartialEq)]
pub struct EndSite {
    pub bone: usize,
    pub position: Vec3,
}

/// Skinned mesh driven by per-bone axis-angle rotations.
///
/// Parameter layout: `3·B` rotation components (bone-major), then a global
/// translation `t` applied as `0.1·t`. The zero vector is the rest pose.
#[derive(Debug, Clone)]
pub struct SkeletalLBS {
    rest: Mesh,
    bones: Vec<Bone>,
    end_sites: Vec<EndSite>,
    /// `N×B`, row-major.
    weights: Vec<f64>,
    /// Per vertex, the bones with non-zero weight.
    influences: Vec<Vec<(usize, f64)>>,
}

impl SkeletalLBS {
    pub fn new(rest: Mesh, bones: Vec<Bone>, end_sites: Vec<EndSite>, weights: Vec<f64>) -> Result<Self, AnimError> {
        let b = bones.len();
        if b == 0 {
            return Err(AnimError::InvalidRig("skeleton has no bones".into()));
        }
        for (i, bone) in bones.iter().enumerate() {
            match bone.parent {
                None if i != 0 => return Err(AnimError::InvalidRig(format!("bone {i} is a second root"))),
                Some(_) if i == 0 => return Err(AnimError::InvalidRig("bone 0 must be the root".into())),
                Some(p) if p >= i => return Err(AnimError::InvalidRig(format!("bone {i} has parent {p}; parents must precede children"))),
                _ => {}
            }
            if !bone.head.iter().all(|v| v.is_finite()) {
                return Err(AnimError::InvalidRig(format!("bone {i} head is not finite")));
            }
        }
        for s in &end_sites {
            if s.bone >= b {
                return Err(AnimError::InvalidRig(format!("end site refers to bone {} of {b}", s.bone)));
            }
        }
        let n = rest.vertex_count();
        if weights.len() != n * b {
            return Err(AnimError::InvalidRig(format!("weight table has {} entries, expected {}×{}", weights.len(), n, b)));
        }
        let mut influences = Vec::with_capacity(n);
        for i in 0..n {
            let row = &weights[i * b..(i + 1) * b];
            if row.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
                return Err(AnimError::InvalidRig(format!("vertex {i} has a negative or non-finite weight")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-6 {
                return Err(AnimError::InvalidRig(format!("weights of vertex {i} sum to {s}")));
            }
            influences.push(row.iter().enumerate().filter(|(_, &w)| w > 0.0).map(|(k, &w)| (k, w)).collect());
        }
        Ok(Self { rest, bones, end_sites, weights, influences })
    }

    /// A single root bone at the mesh centroid owning every vertex.
    pub fn rigid(rest: Mesh) -> Self {
        let n = rest.vertex_count();
        let head = rest.centroid();
        let bones = vec![Bone { name: "root".into(), parent: None, head }];
        Self::new(rest, bones, Vec::new(), vec![1.0; n]).expect("single-bone rig is valid")
    }

    pub fn rest(&self) -> &Mesh {
        &self.rest
    }

    pub fn bones(&self) -> &[Bone] {
        &self.bones
    }

    pub fn end_sites(&self) -> &[EndSite] {
        &self.end_sites
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bone_count(&self) -> usize {
        self.bones.len()
    }

    pub fn param_count(&self) -> usize {
        3 * self.bones.len() + 3
    }

    pub fn joint_count(&self) -> usize {
        self.bones.len() + self.end_sites.len()
    }

    fn check(&self, p: &[f64]) -> Result<(), AnimError> {
        if p.len() != self.param_count() {
            return Err(AnimError::Dimension { expected: self.param_count(), got: p.len() });
        }
        Ok(())
    }

    /// World transforms of every bone relative to the rest pose, composed
    /// root to leaf: `T_b = T_parent · [R_b | j_b − R_b j_b]`. All-zero
    /// rotations give identity transforms.
    pub fn forward_kinematics(&self, rotations: &[f64]) -> Vec<RigidTransform> {
        assert_eq!(rotations.len(), 3 * self.bones.len(), "one axis-angle triple per bone");
        let mut out: Vec<RigidTransform> = Vec::with_capacity(self.bones.len());
        for (b, bone) in self.bones.iter().enumerate() {
            let local = local_transform(&bone.head, super::rotation::rotation_from_params(triple(rotations, b)));
            let world = match bone.parent {
                Some(p) => out[p].compose(&local),
                None => local,
            };
            out.push(world);
        }
        out
    }

    /// Posed vertices for parameters `p`.
    pub fn apply(&self, p: &[f64]) -> Result<Vec<Vec3>, AnimError> {
        self.check(p)?;
        Ok(self.skin(self.rest.vertices(), p))
    }

    /// Skins arbitrary rest positions (one per rig vertex) with `p`.
    pub(crate) fn skin(&self, base: &[Vec3], p: &[f64]) -> Vec<Vec3> {
        let b = self.bones.len();
        let fk = self.forward_kinematics(&p[..3 * b]);
        let t = global_translation(p, b);
        base.iter()
            .zip(&self.influences)
            .map(|(&u, inf)| {
                // displacement form: exactly u when every transform is the identity
                let mut out = u;
                for &(k, w) in inf {
                    let x = fk[k].apply(u);
                    for c in 0..3 {
                        out[c] += w * (x[c] - u[c]);
                    }
                }
                [out[0] + t[0], out[1] + t[1], out[2] + t[2]]
            })
            .collect()
    }

    /// Joint positions: bone heads followed by end sites.
    pub fn joints(&self, p: &[f64]) -> Result<Vec<Vec3>, AnimError> {
        self.check(p)?;
        let b = self.bones.len();
        let fk = self.forward_kinematics(&p[..3 * b]);
        let t = global_translation(p, b);
        let shift = |x: Vec3| [x[0] + t[0], x[1] + t[1], x[2] + t[2]];
        let mut out: Vec<Vec3> = self.bones.iter().zip(&fk).map(|(bone, tr)| shift(tr.apply(bone.head))).collect();
        out.extend(self.end_sites.iter().map(|s| shift(fk[s.bone].apply(s.position))));
        Ok(out)
    }

    /// Reverse pass of [`SkeletalLBS::skin`]: given `∂L/∂vertices`, returns
    /// `∂L/∂p`, and adds `∂L/∂base` into `grad_base` when provided.
    pub(crate) fn skin_vjp(&self, base: &[Vec3], p: &[f64], grad: &[Vec3], grad_base: Option<&mut [Vec3]>) -> Vec<f64> {
        let nb = self.bones.len();
        let mut rots = Vec::with_capacity(nb);
        let mut derivs = Vec::with_capacity(nb);
        for b in 0..nb {
            let (r, d) = rotation_with_derivatives(triple(p, b));
            rots.push(r);
            derivs.push(d);
        }
        let locals: Vec<RigidTransform> = self.bones.iter().zip(&rots).map(|(bone, r)| local_transform(&bone.head, *r)).collect();
        let mut world: Vec<RigidTransform> = Vec::with_capacity(nb);
        for (b, bone) in self.bones.iter().enumerate() {
            let w = match bone.parent {
                Some(q) => world[q].compose(&locals[b]),
                None => locals[b],
            };
            world.push(w);
        }

        let mut g_rot = vec![[[0.0; 3]; 3]; nb];
        let mut g_trans = vec![[0.0; 3]; nb];
        let mut g_global = [0.0; 3];
        let mut grad_base = grad_base;
        for (i, (&u, inf)) in base.iter().zip(&self.influences).enumerate() {
            let g = grad[i];
            for c in 0..3 {
                g_global[c] += g[c];
            }
            let mut w_sum = 0.0;
            let mut gb = g;
            for &(k, w) in inf {
                w_sum += w;
                for r in 0..3 {
                    let wg = w * g[r];
                    g_trans[k][r] += wg;
                    for c in 0..3 {
                        g_rot[k][r][c] += wg * u[c];
                    }
                }
                if grad_base.is_some() {
                    let back = mat_t_vec(&world[k].rotation, g);
                    for c in 0..3 {
                        gb[c] += w * back[c];
                    }
                }
            }
            if let Some(gbase) = grad_base.as_deref_mut() {
                for c in 0..3 {
                    gbase[i][c] += gb[c] - w_sum * g[c];
                }
            }
        }

        let mut out = vec![0.0; self.param_count()];
        for b in (0..nb).rev() {
            let (parent_rot, parent) = match self.bones[b].parent {
                Some(q) => (world[q].rotation, Some(q)),
                None => (IDENTITY, None),
            };
            let (gr, gt) = (g_rot[b], g_trans[b]);
            if let Some(q) = parent {
                let lt = locals[b].translation;
                let lr_t = transpose(&locals[b].rotation);
                let a = mat_mul(&gr, &lr_t);
                for r in 0..3 {
                    for c in 0..3 {
                        g_rot[q][r][c] += a[r][c] + gt[r] * lt[c];
                    }
                    g_trans[q][r] += gt[r];
                }
            }
            // local: R_l, t_l = j − R_l j
            let pt = transpose(&parent_rot);
            let mut g_local = mat_mul(&pt, &gr);
            let g_tl = mat_vec(&pt, gt);
            let j = self.bones[b].head;
            for r in 0..3 {
                for c in 0..3 {
                    g_local[r][c] -= g_tl[r] * j[c];
                }
            }
            let gr3 = rotation_vjp(&derivs[b], &g_local);
            out[3 * b..3 * b + 3].copy_from_slice(&gr3);
        }
        for c in 0..3 {
            out[3 * nb + c] = TRANSLATION_SCALE * g_global[c];
        }
        out
    }
}

#[inline]
fn triple(p: &[f64], b: usize) -> Vec3 {
    [p[3 * b], p[3 * b + 1], p[3 * b + 2]]
}

#[inline]
fn global_translation(p: &[f64], bones: usize) -> Vec3 {
    let o = 3 * bones;
    [TRANSLATION_SCALE * p[o], TRANSLATION_SCALE * p[o + 1], TRANSLATION_SCALE * p[o + 2]]
}

fn local_transform(head: &Vec3, r: Mat3) -> RigidTransform {
    let rj = mat_vec(&r, *head);
    RigidTransform { rotation: r, translation: [head[0] - rj[0], head[1] - rj[1], head[2] - rj[2]] }
}

#[cfg(test)]
mod tests {
    use super::super::rotation::rotation_from_params;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn strip(n: usize) -> Mesh {
        let mut v = Vec::new();
        for i in 0..n {
            let x = i as f64 * 0.5;
            v.push([x, 0.0, 0.0]);
            v.push([x, 0.3, 0.1]);
        }
        let mut f = Vec::new();
        for i in 0..n - 1 {
            f.push([2 * i, 2 * i + 2, 2 * i + 1]);
            f.push([2 * i + 1, 2 * i + 2, 2 * i + 3]);
        }
        Mesh::new(v, f).unwrap()
    }

    fn chain(mesh: Mesh, heads: &[Vec3], weights: Vec<f64>) -> SkeletalLBS {
        let bones = heads
            .iter()
            .enumerate()
            .map(|(i, &h)| Bone { name: format!("b{i}"), parent: if i == 0 { None } else { Some(i - 1) }, head: h })
            .collect();
        SkeletalLBS::new(mesh, bones, vec![EndSite { bone: heads.len() - 1, position: [3.0, 0.0, 0.0] }], weights).unwrap()
    }

    #[test]
    fn rest_pose_is_bit_exact() {
        let mesh = strip(5);
        let n = mesh.vertex_count();
        let w: Vec<f64> = (0..n).flat_map(|i| { let a = i as f64 / (n - 1) as f64; [1.0 - a, a] }).collect();
        let rig = chain(mesh.clone(), &[[0.0, 0.0, 0.0], [1.0, 0.1, 0.0]], w);
        assert_eq!(rig.apply(&vec![0.0; rig.param_count()]).unwrap(), mesh.vertices());
    }

    #[test]
    fn child_hinge_quarter_turn() {
        let mesh = strip(6);
        let n = mesh.vertex_count();
        let joint = [1.25, 0.0, 0.0];
        let w: Vec<f64> = mesh.vertices().iter().flat_map(|v| if v[0] > joint[0] { [0.0, 1.0] } else { [1.0, 0.0] }).collect();
        let rig = chain(mesh.clone(), &[[0.0; 3], joint], w);
        let mut p = vec![0.0; rig.param_count()];
        p[5] = std::f64::consts::FRAC_PI_2;
        let posed = rig.apply(&p).unwrap();
        for i in 0..n {
            let u = mesh.vertices()[i];
            let want = if u[0] > joint[0] { [joint[0] - u[1], u[0] - joint[0], u[2]] } else { u };
            for c in 0..3 {
                assert!((posed[i][c] - want[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_bone_is_rigid() {
        let mesh = strip(4);
        let rig = SkeletalLBS::rigid(mesh.clone());
        let p = [0.3, -0.4, 0.2, 1.0, 2.0, -3.0];
        let posed = rig.apply(&p).unwrap();
        let r = rotation_from_params([0.3, -0.4, 0.2]);
        let c = mesh.centroid();
        for (u, q) in mesh.vertices().iter().zip(&posed) {
            let x = mat_vec(&r, [u[0] - c[0], u[1] - c[1], u[2] - c[2]]);
            let want = [x[0] + c[0] + 0.1, x[1] + c[1] + 0.2, x[2] + c[2] - 0.3];
            for k in 0..3 {
                assert!((q[k] - want[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn translation_is_scaled() {
        let mesh = strip(3);
        let rig = SkeletalLBS::rigid(mesh.clone());
        let posed = rig.apply(&[0.0, 0.0, 0.0, 2.0, 0.0, 0.0]).unwrap();
        for (u, q) in mesh.vertices().iter().zip(&posed) {
            assert_eq!(q[0], u[0] + 0.2);
        }
    }

    #[test]
    fn fk_matches_explicit_matrix_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let heads = [[0.0, 0.0, 0.0], [1.0, 0.2, -0.1], [2.1, -0.3, 0.4]];
        let n = strip(3).vertex_count();
        let rig = chain(strip(3), &heads, vec![1.0, 0.0, 0.0].repeat(n));
        let rots: Vec<f64> = (0..9).map(|_| rng.random_range(-1.0..1.0)).collect();
        let fk = rig.forward_kinematics(&rots);
        // homogeneous 4×4 product T(j) R T(−j) down the chain
        let mut acc = [[0.0; 4]; 4];
        for (i, row) in acc.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        for b in 0..3 {
            let r = rotation_from_params([rots[3 * b], rots[3 * b + 1], rots[3 * b + 2]]);
            let j = heads[b];
            let mut m = [[0.0; 4]; 4];
            for i in 0..3 {
                for k in 0..3 {
                    m[i][k] = r[i][k];
                }
                m[i][3] = j[i] - (r[i][0] * j[0] + r[i][1] * j[1] + r[i][2] * j[2]);
            }
            m[3][3] = 1.0;
            let mut next = [[0.0; 4]; 4];
            for i in 0..4 {
                for k in 0..4 {
                    next[i][k] = (0..4).map(|q| acc[i][q] * m[q][k]).sum();
                }
            }
            acc = next;
            for i in 0..3 {
                for k in 0..3 {
                    assert!((fk[b].rotation[i][k] - acc[i][k]).abs() < 1e-12);
                }
                assert!((fk[b].translation[i] - acc[i][3]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn root_rotation_premultiplies_everything() {
        let heads = [[0.2, 0.1, 0.0], [1.0, 0.2, -0.1]];
        let n = strip(3).vertex_count();
        let rig = chain(strip(3), &heads, vec![0.5, 0.5].repeat(n));
        let base = [0.0, 0.0, 0.0, 0.4, -0.2, 0.1];
        let mut rotated = base;
        rotated[..3].copy_from_slice(&[0.1, 0.5, -0.3]);
        let (fa, fb) = (rig.forward_kinematics(&base), rig.forward_kinematics(&rotated));
        let root = RigidTransform { rotation: rotation_from_params([0.1, 0.5, -0.3]), translation: [0.0; 3] };
        let about_root = RigidTransform { rotation: IDENTITY, translation: heads[0] }
            .compose(&root)
            .compose(&RigidTransform { rotation: IDENTITY, translation: [-heads[0][0], -heads[0][1], -heads[0][2]] });
        for b in 0..2 {
            let want = about_root.compose(&fa[b]);
            for i in 0..3 {
                for k in 0..3 {
                    assert!((fb[b].rotation[i][k] - want.rotation[i][k]).abs() < 1e-12);
                }
                assert!((fb[b].translation[i] - want.translation[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn vjp_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mesh = strip(5);
        let n = mesh.vertex_count();
        let w: Vec<f64> = (0..n)
            .flat_map(|_| {
                let a: f64 = rng.random_range(0.0..1.0);
                let b: f64 = rng.random_range(0.0..(1.0 - a));
                [a, b, 1.0 - a - b]
            })
            .collect();
        let rig = chain(mesh.clone(), &[[0.0; 3], [1.0, 0.1, 0.0], [1.6, -0.2, 0.1]], w);
        let probe: Vec<Vec3> = (0..n).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        let objective = |base: &[Vec3], p: &[f64]| -> f64 {
            rig.skin(base, p).iter().zip(&probe).map(|(v, g)| v[0] * g[0] + v[1] * g[1] + v[2] * g[2]).sum()
        };
        for trial in 0..4 {
            let p: Vec<f64> = if trial == 0 { vec![0.0; 12] } else { (0..12).map(|_| rng.random_range(-0.8..0.8)).collect() };
            let base = mesh.vertices().to_vec();
            let mut gbase = vec![[0.0; 3]; n];
            let g = rig.skin_vjp(&base, &p, &probe, Some(&mut gbase));
            let h = 1e-6;
            for k in 0..12 {
                let (mut a, mut b) = (p.clone(), p.clone());
                a[k] += h;
                b[k] -= h;
                let num = (objective(&base, &a) - objective(&base, &b)) / (2.0 * h);
                assert!((num - g[k]).abs() < 1e-6 * (1.0 + num.abs()), "param {k}: {num} vs {}", g[k]);
            }
            for i in [0, 3, n - 1] {
                for c in 0..3 {
                    let (mut a, mut b) = (base.clone(), base.clone());
                    a[i][c] += h;
                    b[i][c] -= h;
                    let num = (objective(&a, &p) - objective(&b, &p)) / (2.0 * h);
                    assert!((num - gbase[i][c]).abs() < 1e-6, "base {i},{c}");
                }
            }
        }
    }

    #[test]
    fn invalid_rigs_rejected() {
        let mesh = strip(2);
        let bones = vec![Bone { name: "a".into(), parent: None, head: [0.0; 3] }, Bone { name: "b".into(), parent: None, head: [0.0; 3] }];
        assert!(SkeletalLBS::new(mesh.clone(), bones, vec![], vec![0.5; 8]).is_err());
        let bones = vec![Bone { name: "a".into(), parent: None, head: [0.0; 3] }];
        assert!(SkeletalLBS::new(mesh.clone(), bones.clone(), vec![], vec![0.5; 4]).is_err());
        assert!(SkeletalLBS::new(mesh.clone(), bones.clone(), vec![], vec![1.0; 3]).is_err());
        assert!(SkeletalLBS::new(mesh, bones, vec![EndSite { bone: 3, position: [0.0; 3] }], vec![1.0; 4]).is_err());
    }
}
