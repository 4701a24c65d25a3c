use super::{Tape, Tensor, Var};

/// Gradient magnitudes below this are compared absolutely rather than
/// relatively, so coordinates with a vanishing derivative do not turn
/// round-off into huge ratios.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// Compares the reverse-mode gradient of scalar `f` at `point` against
/// central differences with step `h`, returning the largest per-coordinate
/// relative error. A failed reverse pass reports `f64::INFINITY`.
pub fn finite_diff_check<F>(f: F, point: &Tensor, h: f64) -> f64
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Var<'t>,
{
    let tape = Tape::new();
    let x = tape.param(point.clone());
    let y = f(&tape, x);
    let analytic = match tape.backward(y) {
        Ok(g) => g.wrt(x).clone(),
        Err(_) => return f64::INFINITY,
    };

    let eval = |p: Tensor| {
        let tape = Tape::new();
        let x = tape.param(p);
        f(&tape, x).item()
    };

    let mut worst = 0.0f64;
    for i in 0..point.len() {
        let mut plus = point.clone();
        plus.data_mut()[i] += h;
        let mut minus = point.clone();
        minus.data_mut()[i] -= h;
        let numeric = (eval(plus) - eval(minus)) / (2.0 * h);
        let a = analytic.data()[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
        if !err.is_finite() {
            return f64::INFINITY;
        }
        worst = worst.max(err);
    }
    worst
}
