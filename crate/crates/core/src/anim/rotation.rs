//! Axis-angle rotations and small 3×3 helpers.

use crate::mesh::Vec3;

pub type Mat3 = [[f64; 3]; 3];

pub const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

// below this angle the trigonometric coefficients switch to Taylor series
const SMALL_ANGLE: f64 = 1e-4;

#[inline]
pub fn mat_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

#[inline]
pub fn mat_t_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [
        m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2],
        m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
        m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2],
    ]
}

#[inline]
pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    c
}

#[inline]
pub fn transpose(a: &Mat3) -> Mat3 {
    [[a[0][0], a[1][0], a[2][0]], [a[0][1], a[1][1], a[2][1]], [a[0][2], a[1][2], a[2][2]]]
}

pub fn determinant(a: &Mat3) -> f64 {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

fn skew(r: Vec3) -> Mat3 {
    [[0.0, -r[2], r[1]], [r[2], 0.0, -r[0]], [-r[1], r[0], 0.0]]
}

/// `A = sinθ/θ`, `B = (1−cosθ)/θ²` and their derivatives divided by θ,
/// `C = A'/θ` and `D = B'/θ`.
fn coefficients(theta2: f64) -> (f64, f64, f64, f64) {
    let theta = theta2.sqrt();
    if theta < SMALL_ANGLE {
        let t4 = theta2 * theta2;
        (
            1.0 - theta2 / 6.0 + t4 / 120.0,
            0.5 - theta2 / 24.0 + t4 / 720.0,
            -1.0 / 3.0 + theta2 / 30.0 - t4 / 840.0,
            -1.0 / 12.0 + theta2 / 180.0 - t4 / 6720.0,
        )
    } else {
        let (s, c) = theta.sin_cos();
        let a = s / theta;
        let b = (1.0 - c) / theta2;
        (a, b, (theta * c - s) / (theta2 * theta), (theta * s - 2.0 * (1.0 - c)) / (theta2 * theta2))
    }
}

/// Exponential map of an axis-angle vector (Rodrigues' formula). Exactly the
/// identity at `r = 0`.
pub fn rotation_from_params(r: Vec3) -> Mat3 {
    if r == [0.0; 3] {
        return IDENTITY;
    }
    let (a, b, _, _) = coefficients(r[0] * r[0] + r[1] * r[1] + r[2] * r[2]);
    let k = skew(r);
    let k2 = mat_mul(&k, &k);
    let mut m = IDENTITY;
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] += a * k[i][j] + b * k2[i][j];
        }
    }
    m
}

/// The rotation together with `∂R/∂r_i` for each component.
pub fn rotation_with_derivatives(r: Vec3) -> (Mat3, [Mat3; 3]) {
    let theta2 = r[0] * r[0] + r[1] * r[1] + r[2] * r[2];
    let (a, b, c, d) = coefficients(theta2);
    let k = skew(r);
    let k2 = mat_mul(&k, &k);
    let rot = rotation_from_params(r);
    let mut out = [[[0.0; 3]; 3]; 3];
    for (i, di) in out.iter_mut().enumerate() {
        let mut e = [0.0; 3];
        e[i] = 1.0;
        let ei = skew(e);
        let ek = mat_mul(&ei, &k);
        let ke = mat_mul(&k, &ei);
        for row in 0..3 {
            for col in 0..3 {
                di[row][col] = r[i] * c * k[row][col] + a * ei[row][col] + r[i] * d * k2[row][col] + b * (ek[row][col] + ke[row][col]);
            }
        }
    }
    (rot, out)
}

/// Pulls `∂L/∂R` back to `∂L/∂r` given the derivative matrices.
#[inline]
pub fn rotation_vjp(derivs: &[Mat3; 3], grad: &Mat3) -> Vec3 {
    let mut g = [0.0; 3];
    for (k, dk) in derivs.iter().enumerate() {
        for i in 0..3 {
            for j in 0..3 {
                g[k] += grad[i][j] * dk[i][j];
            }
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_is_identity() {
        assert_eq!(rotation_from_params([0.0; 3]), IDENTITY);
    }

    #[test]
    fn quarter_turn_about_z() {
        let r = rotation_from_params([0.0, 0.0, std::f64::consts::FRAC_PI_2]);
        let v = mat_vec(&r, [1.0, 0.0, 0.0]);
        assert!((v[0]).abs() < 1e-15 && (v[1] - 1.0).abs() < 1e-15 && v[2].abs() < 1e-15);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for r in [[0.3, -0.2, 0.5], [1e-6, 2e-6, -1e-6], [0.0, 0.0, 0.0], [2.0, 1.0, -0.5], [5e-5, 0.0, 0.0]] {
            let (_, d) = rotation_with_derivatives(r);
            let h = 1e-6;
            for k in 0..3 {
                let (mut p, mut m) = (r, r);
                p[k] += h;
                m[k] -= h;
                let (rp, rm) = (rotation_from_params(p), rotation_from_params(m));
                for i in 0..3 {
                    for j in 0..3 {
                        let num = (rp[i][j] - rm[i][j]) / (2.0 * h);
                        assert!((num - d[k][i][j]).abs() < 1e-8, "r={r:?} k={k}: {num} vs {}", d[k][i][j]);
                    }
                }
            }
        }
    }

    #[test]
    fn taylor_branch_is_continuous() {
        let r = [SMALL_ANGLE * 0.999, 0.0, 0.0];
        let q = [SMALL_ANGLE * 1.001, 0.0, 0.0];
        let (a, b) = (rotation_with_derivatives(r), rotation_with_derivatives(q));
        for k in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    assert!((a.1[k][i][j] - b.1[k][i][j]).abs() < 1e-6);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn orthonormal_with_unit_determinant(x in -4.0..4.0f64, y in -4.0..4.0f64, z in -4.0..4.0f64) {
            let r = rotation_from_params([x, y, z]);
            let rrt = mat_mul(&r, &transpose(&r));
            for i in 0..3 {
                for j in 0..3 {
                    prop_assert!((rrt[i][j] - IDENTITY[i][j]).abs() < 1e-10);
                }
            }
            prop_assert!((determinant(&r) - 1.0).abs() < 1e-10);
        }
    }
}
