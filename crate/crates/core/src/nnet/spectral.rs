use nalgebra::{DMatrix, DVector};

/// Relative change in the squared singular value at which power iteration stops.
pub const POWER_ITER_TOL: f64 = 1e-10;
pub const POWER_ITER_MAX: usize = 500;

/// Largest singular value of `w` by power iteration on `wᵀw`.
///
/// The start vector is fixed, so the estimate is deterministic and scales
/// exactly with `w`: `spectral_norm(c·w) == c·spectral_norm(w)` up to rounding.
pub fn spectral_norm(w: &DMatrix<f64>) -> f64 {
    let n = w.ncols();
    if n == 0 || w.nrows() == 0 {
        return 0.0;
    }
    let mut v = DVector::from_fn(n, |j, _| 1.0 + 0.1 * ((j + 1) as f64).sin());
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..POWER_ITER_MAX {
        let u = w * &v;
        let mut next = w.tr_mul(&u);
        let norm = next.norm();
        if norm == 0.0 {
            return 0.0;
        }
        next /= norm;
        v = next;
        let converged = (norm - lambda).abs() <= POWER_ITER_TOL * norm;
        lambda = norm;
        if converged {
            break;
        }
    }
    (w * &v).norm()
}
