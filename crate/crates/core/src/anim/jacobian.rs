//! Jacobian-field deformation: per-face target Jacobians turned into vertex
//! positions by an area-weighted Poisson solve.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix};

use super::rotation::{mat_t_vec, mat_vec, rotation_from_params, rotation_vjp, rotation_with_derivatives, Mat3};
use super::{AnimError, TRANSLATION_SCALE};
use crate::mesh::{cross, dot, norm, sub, Mesh, Vec3};

/// Vertex held at its rest position to remove the translational null space.
pub const PINNED_VERTEX: usize = 0;

/// Deformation driven by per-face Jacobians plus a global rigid motion.
///
/// Parameter layout: `9·M` entries of `J_f − I` (face-major, row-major),
/// then global rotation (3), rotation-center offset from the rest centroid
/// (3) and translation (3, applied as `0.1·t`). The rigid motion acts after
/// the solve: `x ↦ R (x − c) + c + 0.1·t`.
#[derive(Debug, Clone)]
pub struct JacobianField {
    rest: Mesh,
    areas: Vec<f64>,
    /// Per face, the gradients of the three barycentric hat functions.
    hat_grads: Vec<[Vec3; 3]>,
    factor: CscCholesky<f64>,
    /// `order[k]` is the vertex stored at row `k` of the reduced system.
    order: Vec<usize>,
    /// Inverse of `order`; `usize::MAX` for the pinned vertex.
    slot: Vec<usize>,
    /// Constant right-hand-side term from the pinned vertex, per reduced row.
    pin_rhs: Vec<Vec3>,
    centroid: Vec3,
}

impl JacobianField {
    pub fn new(rest: Mesh) -> Result<Self, AnimError> {
        let n = rest.vertex_count();
        let v = rest.vertices();
        check_connected(&rest)?;
        let mut areas = Vec::with_capacity(rest.face_count());
        let mut hat_grads = Vec::with_capacity(rest.face_count());
        for (fi, f) in rest.faces().iter().enumerate() {
            let (a, b, c) = (v[f[0]], v[f[1]], v[f[2]]);
            let nrm = cross(sub(b, a), sub(c, a));
            let twice = norm(nrm);
            if !(twice > 0.0) {
                return Err(AnimError::Singular(format!("face {fi} has zero area")));
            }
            let unit = [nrm[0] / twice, nrm[1] / twice, nrm[2] / twice];
            let g = |e: Vec3| {
                let x = cross(unit, e);
                [x[0] / twice, x[1] / twice, x[2] / twice]
            };
            hat_grads.push([g(sub(c, b)), g(sub(a, c)), g(sub(b, a))]);
            areas.push(twice / 2.0);
        }

        // cotangent Laplacian L = Σ_f A_f G_fᵀ G_f
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for f in rest.faces() {
            for &a in f {
                for &b in f {
                    if a != b && !adj[a].contains(&b) {
                        adj[a].push(b);
                    }
                }
            }
        }
        let order: Vec<usize> = reverse_cuthill_mckee(&adj).into_iter().filter(|&i| i != PINNED_VERTEX).collect();
        let mut slot = vec![usize::MAX; n];
        for (k, &i) in order.iter().enumerate() {
            slot[i] = k;
        }
        let m = n - 1;
        let mut coo = CooMatrix::new(m, m);
        let mut pin_rhs = vec![[0.0; 3]; m];
        let pin = v[PINNED_VERTEX];
        for ((f, g), &area) in rest.faces().iter().zip(&hat_grads).zip(&areas) {
            for i in 0..3 {
                for j in 0..3 {
                    let lij = area * dot(g[i], g[j]);
                    let (si, sj) = (slot[f[i]], slot[f[j]]);
                    if si == usize::MAX {
                        continue;
                    }
                    if sj == usize::MAX {
                        for c in 0..3 {
                            pin_rhs[si][c] -= lij * pin[c];
                        }
                    } else {
                        coo.push(si, sj, lij);
                    }
                }
            }
        }
        let factor = CscCholesky::factor(&CscMatrix::from(&coo)).map_err(|e| AnimError::Singular(format!("Poisson system: {e}")))?;
        let centroid = rest.centroid();
        Ok(Self { rest, areas, hat_grads, factor, order, slot, pin_rhs, centroid })
    }

    pub fn rest(&self) -> &Mesh {
        &self.rest
    }

    pub fn face_count(&self) -> usize {
        self.rest.face_count()
    }

    pub fn param_count(&self) -> usize {
        9 * self.face_count() + 9
    }

    pub fn areas(&self) -> &[f64] {
        &self.areas
    }

    fn solve_reduced(&self, rhs: &[Vec3]) -> DMatrix<f64> {
        let m = self.order.len();
        let b = DMatrix::from_fn(m, 3, |r, c| rhs[r][c]);
        self.factor.solve(&b)
    }

    /// Vertex positions minimizing `Σ_f A_f ‖∇_f Φ − J_f‖²` with the pinned
    /// vertex at its rest position.
    pub fn poisson_solve(&self, jacobians: &[Mat3]) -> Vec<Vec3> {
        assert_eq!(jacobians.len(), self.face_count(), "one Jacobian per face");
        let mut rhs = self.pin_rhs.clone();
        for ((f, g), (&area, j)) in self.rest.faces().iter().zip(&self.hat_grads).zip(self.areas.iter().zip(jacobians)) {
            for k in 0..3 {
                let s = self.slot[f[k]];
                if s == usize::MAX {
                    continue;
                }
                let jg = mat_vec(j, g[k]);
                for c in 0..3 {
                    rhs[s][c] += area * jg[c];
                }
            }
        }
        let x = self.solve_reduced(&rhs);
        let mut out = vec![self.rest.vertices()[PINNED_VERTEX]; self.rest.vertex_count()];
        for (k, &i) in self.order.iter().enumerate() {
            out[i] = [x[(k, 0)], x[(k, 1)], x[(k, 2)]];
        }
        out
    }

    /// Reverse pass of [`JacobianField::poisson_solve`]: `∂L/∂J_f` given
    /// `∂L/∂Φ`.
    pub fn poisson_vjp(&self, grad: &[Vec3]) -> Vec<Mat3> {
        let rhs: Vec<Vec3> = self.order.iter().map(|&i| grad[i]).collect();
        let y = self.solve_reduced(&rhs);
        let yv = |vtx: usize| -> Vec3 {
            let s = self.slot[vtx];
            if s == usize::MAX {
                [0.0; 3]
            } else {
                [y[(s, 0)], y[(s, 1)], y[(s, 2)]]
            }
        };
        self.rest
            .faces()
            .iter()
            .zip(&self.hat_grads)
            .zip(&self.areas)
            .map(|((f, g), &area)| {
                let mut out = [[0.0; 3]; 3];
                for k in 0..3 {
                    let yk = yv(f[k]);
                    for r in 0..3 {
                        for c in 0..3 {
                            out[r][c] += area * yk[r] * g[k][c];
                        }
                    }
                }
                out
            })
            .collect()
    }

    fn split<'a>(&self, p: &'a [f64]) -> (&'a [f64], Vec3, Vec3, Vec3) {
        let o = 9 * self.face_count();
        let t = |k: usize| [p[o + k], p[o + k + 1], p[o + k + 2]];
        (&p[..o], t(0), t(3), t(6))
    }

    fn jacobians(offsets: &[f64]) -> Vec<Mat3> {
        offsets
            .chunks(9)
            .map(|d| [[1.0 + d[0], d[1], d[2]], [d[3], 1.0 + d[4], d[5]], [d[6], d[7], 1.0 + d[8]]])
            .collect()
    }

    pub fn apply(&self, p: &[f64]) -> Result<Vec<Vec3>, AnimError> {
        if p.len() != self.param_count() {
            return Err(AnimError::Dimension { expected: self.param_count(), got: p.len() });
        }
        let (offsets, r, center, t) = self.split(p);
        let phi = self.poisson_solve(&Self::jacobians(offsets));
        let rot = rotation_from_params(r);
        let c = [self.centroid[0] + center[0], self.centroid[1] + center[1], self.centroid[2] + center[2]];
        Ok(phi
            .iter()
            .map(|x| {
                let y = mat_vec(&rot, sub(*x, c));
                [y[0] + c[0] + TRANSLATION_SCALE * t[0], y[1] + c[1] + TRANSLATION_SCALE * t[1], y[2] + c[2] + TRANSLATION_SCALE * t[2]]
            })
            .collect())
    }

    pub fn apply_vjp(&self, p: &[f64], grad: &[Vec3]) -> Vec<f64> {
        let (offsets, r, center, _) = self.split(p);
        let phi = self.poisson_solve(&Self::jacobians(offsets));
        let (rot, derivs) = rotation_with_derivatives(r);
        let c = [self.centroid[0] + center[0], self.centroid[1] + center[1], self.centroid[2] + center[2]];
        let mut g_rot = [[0.0; 3]; 3];
        let mut g_c = [0.0; 3];
        let mut g_t = [0.0; 3];
        let mut g_phi = Vec::with_capacity(phi.len());
        for (x, g) in phi.iter().zip(grad) {
            let d = sub(*x, c);
            let back = mat_t_vec(&rot, *g);
            for i in 0..3 {
                for j in 0..3 {
                    g_rot[i][j] += g[i] * d[j];
                }
                g_c[i] += g[i] - back[i];
                g_t[i] += TRANSLATION_SCALE * g[i];
            }
            g_phi.push(back);
        }
        let mut out: Vec<f64> = self.poisson_vjp(&g_phi).iter().flat_map(|m| m.iter().flatten().copied().collect::<Vec<_>>()).collect();
        out.extend(rotation_vjp(&derivs, &g_rot));
        out.extend(g_c);
        out.extend(g_t);
        out
    }
}

fn check_connected(mesh: &Mesh) -> Result<(), AnimError> {
    let n = mesh.vertex_count();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for f in mesh.faces() {
        for k in 1..3 {
            let (a, b) = (find(&mut parent, f[0]), find(&mut parent, f[k]));
            parent[a] = b;
        }
    }
    let root = find(&mut parent, 0);
    for i in 1..n {
        if find(&mut parent, i) != root {
            return Err(AnimError::Singular(format!("mesh is disconnected: vertex {i} is not connected to vertex 0")));
        }
    }
    Ok(())
}

/// Bandwidth-reducing vertex order for a connected graph.
fn reverse_cuthill_mckee(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let start = (0..n).min_by_key(|&i| adj[i].len()).unwrap_or(0);
    let mut seen = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    while let Some(v) = queue.pop_front() {
        order.push(v);
        let mut next: Vec<usize> = adj[v].iter().copied().filter(|&u| !seen[u]).collect();
        next.sort_by_key(|&u| (adj[u].len(), u));
        for u in next {
            seen[u] = true;
            queue.push_back(u);
        }
    }
    order.reverse();
    order
}
