//! Dense fixed-dimension kernels shared by the recursive estimators.
//!
//! Everything here operates on `nalgebra` dynamic vectors/matrices with the
//! dimension fixed per stream; callers check dimensions once at accumulator
//! construction, not per sample.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub(crate) fn is_finite_vec(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

pub(crate) fn is_finite_mat(m: &DMatrix<f64>) -> bool {
    m.iter().all(|x| x.is_finite())
}

/// Relative symmetry check: `|a_ij - a_ji| <= tol * max(1, |a_ij|, |a_ji|)`.
pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            let (a, b) = (m[(i, j)], m[(j, i)]);
            if (a - b).abs() > tol * 1.0_f64.max(a.abs()).max(b.abs()) {
                return false;
            }
        }
    }
    true
}

/// Sherman-Morrison (Riccati) update of a maintained inverse:
/// replaces `a_inv` = A⁻¹ by (A + c·uuᵀ)⁻¹ in O(p²).
///
/// The updated matrix is re-symmetrized ((M + Mᵀ)/2) so that floating-point
/// drift cannot accumulate over long update streams.
pub fn rank_one_inverse_update(a_inv: &mut DMatrix<f64>, u: &DVector<f64>, c: f64) -> Result<()> {
    let p = a_inv.nrows();
    if u.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            found: u.len(),
        });
    }
    if !c.is_finite() || !is_finite_vec(u) {
        return Err(Error::NonFiniteInput("rank-one update"));
    }
    if c <= 0.0 {
        return Err(Error::Config(format!(
            "rank-one update weight must be positive, got {c}"
        )));
    }
    debug_assert!(is_finite_mat(a_inv));

    // v = A⁻¹ u, scale = c / (1 + c uᵀ A⁻¹ u); the denominator is >= 1 for
    // positive definite A⁻¹ and c > 0, so the update cannot blow up.
    let v = &*a_inv * u;
    let denom = 1.0 + c * u.dot(&v);
    let scale = c / denom;
    for i in 0..p {
        for j in 0..p {
            a_inv[(i, j)] -= scale * v[i] * v[j];
        }
    }
    symmetrize(a_inv);
    Ok(())
}

/// In-place (M + Mᵀ)/2; leaves the matrix bitwise symmetric.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// xᵀ A x.
pub fn quad_form(x: &DVector<f64>, a: &DMatrix<f64>) -> Result<f64> {
    if a.nrows() != x.len() || a.ncols() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: a.nrows(),
        });
    }
    Ok(x.dot(&(a * x)))
}

/// Lower-triangular Cholesky factor L with L·Lᵀ = A.
///
/// Rejects asymmetric input (1e-12 relative) and non-positive-definite
/// matrices.
pub fn cholesky(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !is_finite_mat(a) {
        return Err(Error::NonFiniteInput("cholesky"));
    }
    if !is_symmetric(a, 1e-12) {
        return Err(Error::Config("cholesky input is not symmetric".into()));
    }
    let chol = nalgebra::Cholesky::new(a.clone()).ok_or(Error::NotPositiveDefinite)?;
    Ok(chol.l())
}

/// Inverse of a symmetric positive-definite matrix via its Cholesky factor.
pub fn spd_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !is_finite_mat(a) {
        return Err(Error::NonFiniteInput("spd inverse"));
    }
    if !is_symmetric(a, 1e-12) {
        return Err(Error::Config("spd inverse input is not symmetric".into()));
    }
    let chol = nalgebra::Cholesky::new(a.clone()).ok_or(Error::NotPositiveDefinite)?;
    let mut inv = chol.inverse();
    symmetrize(&mut inv);
    Ok(inv)
}
