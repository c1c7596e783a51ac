//! Spectral diagnostics: the Chebyshev residual bound for GMRES on HPD
//! systems and extreme eigenvalues of small matrices.

use super::matrix::{SparseHermitianMatrix, DENSE_LIMIT};
use crate::{Error, Result};
use nalgebra::SymmetricEigen;

/// `1 / T_j(rho)` with `rho = (lmax + lmin) / (lmax - lmin)`.
pub fn chebyshev_bound(lambda_min: f64, lambda_max: f64, j: usize) -> Result<f64> {
    if !(lambda_min > 0.0 && lambda_min < lambda_max && lambda_max.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "need 0 < lambda_min < lambda_max, got ({lambda_min}, {lambda_max})"
        )));
    }
    let rho = (lambda_max + lambda_min) / (lambda_max - lambda_min);
    // T_j(rho) = cosh(j acosh rho) for rho > 1; overflow gives a zero bound.
    Ok(1.0 / (j as f64 * rho.acosh()).cosh())
}

/// Smallest and largest eigenvalue of a Hermitian matrix by dense
/// decomposition. Refused above [`DENSE_LIMIT`].
pub fn eigen_extremes(a: &SparseHermitianMatrix) -> Result<(f64, f64)> {
    if !a.is_hermitian() {
        return Err(Error::InvalidParameter(
            "matrix is not flagged Hermitian".into(),
        ));
    }
    if a.n() > DENSE_LIMIT {
        return Err(Error::TooLarge {
            n: a.n(),
            limit: DENSE_LIMIT,
        });
    }
    let eig = SymmetricEigen::new(a.to_dense()?);
    let lo = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let hi = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    Ok((lo, hi))
}
