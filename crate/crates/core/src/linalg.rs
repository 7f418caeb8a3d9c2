//! Small complex linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::array_model::SteeringGrid;

/// Least-squares amplitudes of `y` on the grid columns listed in `bins`.
///
/// Solved by SVD so that nearly collinear neighbouring columns do not blow up.
/// Returns an empty vector for an empty support.
pub fn refit_amplitudes(grid: &SteeringGrid, bins: &[usize], y: &[Complex64]) -> Vec<Complex64> {
    if bins.is_empty() {
        return Vec::new();
    }
    let m = grid.num_elements();
    let a = DMatrix::from_fn(m, bins.len(), |r, c| grid.column(bins[c])[r]);
    let b = DVector::from_column_slice(y);
    let svd = a.svd(true, true);
    let eps = 1e-10 * svd.singular_values.max().max(f64::MIN_POSITIVE);
    match svd.solve(&b, eps) {
        Ok(x) => x.iter().copied().collect(),
        Err(_) => vec![Complex64::new(0.0, 0.0); bins.len()],
    }
}

/// `‖y − Σ_k a(θ_{bins[k]}) s_k‖²`.
pub fn residual_norm_sqr(
    grid: &SteeringGrid,
    bins: &[usize],
    amplitudes: &[Complex64],
    y: &[Complex64],
) -> f64 {
    let mut r: Vec<Complex64> = y.to_vec();
    for (&k, s) in bins.iter().zip(amplitudes) {
        for (ri, a) in r.iter_mut().zip(grid.column(k)) {
            *ri -= a * s;
        }
    }
    r.iter().map(|v| v.norm_sqr()).sum()
}

pub fn norm_sqr(v: &[Complex64]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum()
}
