//! Small dense linear-algebra helpers for symmetric positive-definite matrices.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Result, TgmError};

/// Largest tolerated |M_ij - M_ji|, relative to max(1, max |M_ij|).
pub const SYMMETRY_TOL: f64 = 1e-10;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Max absolute asymmetry of a square matrix.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn check_square(m: &DMatrix<f64>) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(TgmError::DimensionMismatch {
            expected: m.nrows(),
            got: m.ncols(),
        });
    }
    if let Some(i) = m.iter().position(|v| !v.is_finite()) {
        return Err(TgmError::NonFinite(i));
    }
    Ok(m.nrows())
}

/// Verify symmetry within tolerance and return the symmetrized copy.
pub fn checked_symmetric(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_square(m)?;
    let scale = m.amax().max(1.0);
    let asym = asymmetry(m);
    if asym > SYMMETRY_TOL * scale {
        return Err(TgmError::NotSymmetric(asym));
    }
    Ok(symmetrize(m))
}

/// Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let sym = checked_symmetric(m)?;
    Cholesky::new(sym).ok_or(TgmError::NotPositiveDefinite)
}

pub fn ln_det_chol(c: &Cholesky<f64, Dyn>) -> f64 {
    let l = c.l_dirty();
    2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
}

pub fn ln_det_spd(m: &DMatrix<f64>) -> Result<f64> {
    Ok(ln_det_chol(&cholesky(m)?))
}

/// Inverse of an SPD matrix, symmetrized to remove round-off asymmetry.
pub fn inverse_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(symmetrize(&cholesky(m)?.inverse()))
}

/// xᵀ M y for a symmetric M.
pub fn bilinear(x: &DVector<f64>, m: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    (x.transpose() * m * y)[(0, 0)]
}
