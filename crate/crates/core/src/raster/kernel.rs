//! Scan conversion shared by every rendering entry point.
//!
//! Coverage rule: pixel `(i, j)` has its center at `(x, y) = (j, i)` and is
//! covered by a triangle when all three edge functions are positive, or zero
//! on a top-left edge. Among covering triangles the smallest interpolated
//! depth wins; at exactly equal depth the lower face index wins. Triangles
//! with a vertex at depth `<= NEAR_DEPTH` or with zero projected area are
//! skipped. Attributes are interpolated with screen-space barycentrics.

use crate::mesh::{Camera, Vec3};

pub const NEAR_DEPTH: f64 = 1e-6;
pub const NO_FACE: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScreenVertex {
    pub x: f64,
    pub y: f64,
    pub depth: f64,
}

impl ScreenVertex {
    pub fn in_front(&self) -> bool {
        self.depth > NEAR_DEPTH
    }
}

pub fn project_vertices(vertices: &[Vec3], camera: &Camera) -> Vec<ScreenVertex> {
    vertices
        .iter()
        .map(|&v| {
            let c = camera.to_camera_space(v);
            let (x, y) = camera.project_camera_space(c);
            ScreenVertex { x, y, depth: c[2] }
        })
        .collect()
}

#[inline]
pub fn edge_function(ax: f64, ay: f64, bx: f64, by: f64, px: f64, py: f64) -> f64 {
    (bx - ax) * (py - ay) - (by - ay) * (px - ax)
}

#[inline]
pub fn is_top_left(dx: f64, dy: f64) -> bool {
    dy < 0.0 || (dy == 0.0 && dx > 0.0)
}

/// Barycentric weights of `(px, py)` when it lies inside the triangle under
/// the coverage rule, `None` otherwise. `area` is the signed projected area
/// (times two) and must be non-zero.
#[inline]
pub fn inside_weights(v: &[ScreenVertex; 3], area: f64, px: f64, py: f64) -> Option<[f64; 3]> {
    let e = [
        edge_function(v[1].x, v[1].y, v[2].x, v[2].y, px, py),
        edge_function(v[2].x, v[2].y, v[0].x, v[0].y, px, py),
        edge_function(v[0].x, v[0].y, v[1].x, v[1].y, px, py),
    ];
    let s = if area > 0.0 { 1.0 } else { -1.0 };
    for k in 0..3 {
        let ek = s * e[k];
        if ek < 0.0 {
            return None;
        }
        if ek == 0.0 {
            let (from, to) = (&v[(k + 1) % 3], &v[(k + 2) % 3]);
            if !is_top_left(s * (to.x - from.x), s * (to.y - from.y)) {
                return None;
            }
        }
    }
    Some([e[0] / area, e[1] / area, e[2] / area])
}

#[inline]
pub fn signed_area(v: &[ScreenVertex; 3]) -> f64 {
    edge_function(v[0].x, v[0].y, v[1].x, v[1].y, v[2].x, v[2].y)
}

/// Per-pixel result of scan conversion.
#[derive(Debug, Clone)]
pub struct Rasterization {
    pub width: usize,
    pub height: usize,
    pub screen: Vec<ScreenVertex>,
    /// Winning face per pixel, [`NO_FACE`] when uncovered.
    pub face: Vec<u32>,
    pub bary: Vec<[f64; 3]>,
    pub depth: Vec<f64>,
}

impl Rasterization {
    pub fn covered(&self, pixel: usize) -> bool {
        self.face[pixel] != NO_FACE
    }

    pub fn coverage_mask(&self) -> Vec<bool> {
        self.face.iter().map(|&f| f != NO_FACE).collect()
    }

    /// Effective weights used by [`Rasterization::interpolate`].
    #[inline]
    pub fn weights(&self, pixel: usize) -> [f64; 3] {
        let w = self.bary[pixel];
        [1.0 - w[1] - w[2], w[1], w[2]]
    }

    /// Writes the interpolated attribute of a covered pixel into `out`.
    #[inline]
    pub fn interpolate(&self, faces: &[[usize; 3]], attrs: &[f64], dim: usize, pixel: usize, out: &mut [f64]) {
        let f = faces[self.face[pixel] as usize];
        let w = self.bary[pixel];
        let (a, b, c) = (&attrs[f[0] * dim..][..dim], &attrs[f[1] * dim..][..dim], &attrs[f[2] * dim..][..dim]);
        // anchored at the first corner so equal corner values come back exactly
        for k in 0..dim {
            out[k] = a[k] + w[1] * (b[k] - a[k]) + w[2] * (c[k] - a[k]);
        }
    }

    /// Given `∂L/∂w` for the barycentric weights of a covered pixel, adds
    /// `∂L/∂(x, y)` of the three projected vertices into `grad_xy`.
    #[inline]
    pub fn bary_vjp(&self, faces: &[[usize; 3]], pixel: usize, g: [f64; 3], grad_xy: &mut [[f64; 2]]) {
        let f = faces[self.face[pixel] as usize];
        let v = [self.screen[f[0]], self.screen[f[1]], self.screen[f[2]]];
        let (px, py) = ((pixel % self.width) as f64, (pixel / self.width) as f64);
        let d = barycentric_vjp(&v, px, py, self.bary[pixel], g);
        for k in 0..3 {
            grad_xy[f[k]][0] += d[k][0];
            grad_xy[f[k]][1] += d[k][1];
        }
    }
}

/// Derivatives of screen-space barycentrics with respect to the projected
/// triangle corners, contracted with `g = ∂L/∂w`.
#[inline]
pub fn barycentric_vjp(v: &[ScreenVertex; 3], px: f64, py: f64, w: [f64; 3], g: [f64; 3]) -> [[f64; 2]; 3] {
    let area = signed_area(v);
    let inv = 1.0 / area;
    let (g0, g1, g2) = (g[0] * inv, g[1] * inv, g[2] * inv);
    let ga = -(g[0] * w[0] + g[1] * w[1] + g[2] * w[2]) * inv;
    let (x0, y0, x1, y1, x2, y2) = (v[0].x, v[0].y, v[1].x, v[1].y, v[2].x, v[2].y);
    [
        [
            g1 * (py - y2) + g2 * (y1 - py) + ga * (y1 - y2),
            g1 * (x2 - px) + g2 * (px - x1) + ga * (x2 - x1),
        ],
        [
            g0 * (y2 - py) + g2 * (py - y0) + ga * (y2 - y0),
            g0 * (px - x2) + g2 * (x0 - px) + ga * (x0 - x2),
        ],
        [
            g0 * (py - y1) + g1 * (y0 - py) + ga * (y0 - y1),
            g0 * (x1 - px) + g1 * (px - x0) + ga * (x1 - x0),
        ],
    ]
}

/// Scan-converts `faces` over a `width`×`height` pixel grid.
pub fn rasterize(screen: Vec<ScreenVertex>, faces: &[[usize; 3]], width: usize, height: usize) -> Rasterization {
    let n = width * height;
    let mut face = vec![NO_FACE; n];
    let mut bary = vec![[0.0; 3]; n];
    let mut depth = vec![f64::INFINITY; n];

    for (fi, f) in faces.iter().enumerate() {
        let v = [screen[f[0]], screen[f[1]], screen[f[2]]];
        if !v.iter().all(ScreenVertex::in_front) {
            continue;
        }
        let area = signed_area(&v);
        if area == 0.0 || !area.is_finite() {
            continue;
        }
        let (min_x, max_x) = (v[0].x.min(v[1].x).min(v[2].x), v[0].x.max(v[1].x).max(v[2].x));
        let (min_y, max_y) = (v[0].y.min(v[1].y).min(v[2].y), v[0].y.max(v[1].y).max(v[2].y));
        // one pixel of slack so rounding in the edge functions can never
        // disagree with the bounding box
        let j0 = (min_x.floor() - 1.0).max(0.0);
        let j1 = (max_x.ceil() + 1.0).min(width as f64 - 1.0);
        let i0 = (min_y.floor() - 1.0).max(0.0);
        let i1 = (max_y.ceil() + 1.0).min(height as f64 - 1.0);
        if j0 > j1 || i0 > i1 {
            continue;
        }
        for i in i0 as usize..=i1 as usize {
            for j in j0 as usize..=j1 as usize {
                let Some(w) = inside_weights(&v, area, j as f64, i as f64) else { continue };
                let z = w[0] * v[0].depth + w[1] * v[1].depth + w[2] * v[2].depth;
                let p = i * width + j;
                if z < depth[p] {
                    depth[p] = z;
                    face[p] = fi as u32;
                    bary[p] = w;
                }
            }
        }
    }
    Rasterization { width, height, screen, face, bary, depth }
}

/// Pulls per-vertex screen-space gradients back to world positions.
pub fn screen_to_world_vjp(vertices: &[Vec3], camera: &Camera, grad_xy: &[[f64; 2]]) -> Vec<Vec3> {
    vertices
        .iter()
        .zip(grad_xy)
        .map(|(&v, g)| if g[0] == 0.0 && g[1] == 0.0 { [0.0; 3] } else { camera.project_vjp(v, g[0], g[1]) })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sv(x: f64, y: f64) -> ScreenVertex {
        ScreenVertex { x, y, depth: 1.0 }
    }

    #[test]
    fn shared_edge_owned_once() {
        // two triangles sharing the diagonal of a square; the pixel centers on
        // the diagonal must be covered exactly once
        let screen = vec![sv(0.0, 0.0), sv(4.0, 0.0), sv(4.0, 4.0), sv(0.0, 4.0)];
        let faces = [[0, 1, 2], [0, 2, 3]];
        for tris in [faces, [[0, 2, 1], [0, 3, 2]]] {
            let mut count = vec![0; 25];
            for f in tris {
                let v = [screen[f[0]], screen[f[1]], screen[f[2]]];
                let area = signed_area(&v);
                for p in 0..25 {
                    if inside_weights(&v, area, (p % 5) as f64, (p / 5) as f64).is_some() {
                        count[p] += 1;
                    }
                }
            }
            // corners excluded: they also sit on the square's outer edges
            for k in 1..4 {
                assert_eq!(count[k * 5 + k], 1, "diagonal pixel {k}");
            }
        }
    }

    #[test]
    fn barycentric_vjp_matches_finite_differences() {
        let v = [sv(1.3, 0.7), sv(7.9, 2.2), sv(3.1, 6.4)];
        let (px, py) = (4.0, 3.0);
        let g = [0.3, -1.1, 0.6];
        let area = signed_area(&v);
        let w = inside_weights(&v, area, px, py).unwrap();
        let d = barycentric_vjp(&v, px, py, w, g);
        let h = 1e-6;
        let objective = |v: &[ScreenVertex; 3]| {
            let a = signed_area(v);
            let e = [
                edge_function(v[1].x, v[1].y, v[2].x, v[2].y, px, py),
                edge_function(v[2].x, v[2].y, v[0].x, v[0].y, px, py),
                edge_function(v[0].x, v[0].y, v[1].x, v[1].y, px, py),
            ];
            (0..3).map(|k| g[k] * e[k] / a).sum::<f64>()
        };
        for k in 0..3 {
            for axis in 0..2 {
                let mut plus = v;
                let mut minus = v;
                if axis == 0 {
                    plus[k].x += h;
                    minus[k].x -= h;
                } else {
                    plus[k].y += h;
                    minus[k].y -= h;
                }
                let num = (objective(&plus) - objective(&minus)) / (2.0 * h);
                assert!((num - d[k][axis]).abs() < 1e-8, "vertex {k} axis {axis}: {num} vs {}", d[k][axis]);
            }
        }
    }
}
