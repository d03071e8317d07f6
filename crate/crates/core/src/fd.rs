//! Central finite differences for gradient checks in unit tests.

use nalgebra::{DMatrix, DVector};

pub const STEP: f64 = 1e-6;

/// Numerical Jacobian of `f: R^n -> R^m` by central differences.
pub fn jacobian<F>(x: &DVector<f64>, step: f64, mut f: F) -> DMatrix<f64>
where
    F: FnMut(&DVector<f64>) -> DVector<f64>,
{
    let f0 = f(x);
    let mut jac = DMatrix::zeros(f0.len(), x.len());
    let mut xp = x.clone();
    for c in 0..x.len() {
        xp[c] = x[c] + step;
        let fp = f(&xp);
        xp[c] = x[c] - step;
        let fm = f(&xp);
        xp[c] = x[c];
        jac.set_column(c, &((fp - fm) / (2.0 * step)));
    }
    jac
}

pub fn gradient<F>(x: &DVector<f64>, step: f64, mut f: F) -> DVector<f64>
where
    F: FnMut(&DVector<f64>) -> f64,
{
    let j = jacobian(x, step, |v| DVector::from_element(1, f(v)));
    j.row(0).transpose()
}

/// Worst elementwise relative error, ignoring entries where both values are
/// below `floor` in magnitude.
pub fn max_rel_error(analytic: &DMatrix<f64>, numeric: &DMatrix<f64>, floor: f64) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    analytic
        .iter()
        .zip(numeric.iter())
        .filter(|(a, n)| a.abs() > floor || n.abs() > floor)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()))
        .fold(0.0, f64::max)
}

/// Worst `|a - n| / max(|a|, |n|, floor)`: relative for large entries,
/// absolute (scaled by `floor`) for entries near zero.
pub fn scaled_error(analytic: &DMatrix<f64>, numeric: &DMatrix<f64>, floor: f64) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}
