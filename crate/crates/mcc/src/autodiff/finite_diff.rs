//! Central finite differences, the independent oracle for gradient tests.

use crate::autodiff::matrix::Matrix;
use crate::error::{Error, Result};

/// Perturbation used by gradient checks.
pub const FD_STEP: f64 = 1e-5;

/// Maximum relative error allowed between analytic and numeric gradients.
pub const GRAD_TOL: f64 = 1e-4;

/// Denominator floor for the relative error, so near-zero entries are
/// effectively compared absolutely.
pub const REL_FLOOR: f64 = 1e-4;

/// Numeric gradient of `f` at `at`: each entry is perturbed by `±h` and the
/// derivative estimated as `(f(x+h) - f(x-h)) / (2h)`.
pub fn central_diff(mut f: impl FnMut(&Matrix) -> f64, at: &Matrix, h: f64) -> Matrix {
    let mut grad = Matrix::zeros(at.rows(), at.cols());
    for i in 0..at.rows() {
        for j in 0..at.cols() {
            let mut plus = at.clone();
            plus.set(i, j, at.get(i, j) + h);
            let mut minus = at.clone();
            minus.set(i, j, at.get(i, j) - h);
            grad.set(i, j, (f(&plus) - f(&minus)) / (2.0 * h));
        }
    }
    grad
}

/// Relative error with an absolute floor: `|a - b| / max(|a|, |b|, 1e-4)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Largest entrywise [`rel_err`] between two same-shaped matrices.
pub fn max_rel_err(a: &Matrix, b: &Matrix) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::dimension("max_rel_err", a.shape(), b.shape()));
    }
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| rel_err(x, y))
        .fold(0.0, f64::max))
}
