//! Per-sample geometry of the geometric-median objective.
//!
//! The population objective is `E[‖X − h‖ − ‖X‖]`; everything the online
//! estimators need is the per-sample loss, its gradient (a unit vector away
//! from the observation) and its Hessian, with explicit handling of the
//! degenerate coincidence `x = h`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Gradient of the per-sample loss, flagged when the observation coincides
/// with the evaluation point (where the loss is not differentiable).
#[derive(Debug, Clone)]
pub struct GradResult {
    /// `-(x - h)/‖x - h‖`, or zero in the degenerate case.
    pub grad: DVector<f64>,
    pub degenerate: bool,
}

/// Coincidence threshold: `1e-12 · (1 + ‖x‖)`.
///
/// Continuous data never hits the threshold; file-sourced data can contain
/// exact duplicates, which the accumulators skip rather than perturb.
pub fn coincidence_eps(x: &DVector<f64>) -> f64 {
    1e-12 * (1.0 + x.norm())
}

/// g(x, h) = ‖x − h‖ − ‖x‖.
pub fn loss_g(x: &DVector<f64>, h: &DVector<f64>) -> f64 {
    (x - h).norm() - x.norm()
}

/// ∇g(x, h) = −(x − h)/‖x − h‖, with `degenerate = true` (and zero gradient)
/// when ‖x − h‖ ≤ eps.
pub fn grad_g(x: &DVector<f64>, h: &DVector<f64>, eps: f64) -> GradResult {
    let diff = x - h;
    let r = diff.norm();
    if r <= eps {
        GradResult {
            grad: DVector::zeros(x.len()),
            degenerate: true,
        }
    } else {
        GradResult {
            grad: -diff / r,
            degenerate: false,
        }
    }
}

/// ∇²g(x, h) = (1/r)(I − uuᵀ) with r = ‖x − h‖ and u = (x − h)/r.
///
/// Symmetric positive semi-definite of rank p − 1. A coincident sample has no
/// usable curvature and is reported as [`Error::DegenerateSample`] so the
/// caller can skip it.
pub fn hessian_g(x: &DVector<f64>, h: &DVector<f64>, eps: f64) -> Result<DMatrix<f64>> {
    let diff = x - h;
    let r = diff.norm();
    if r <= eps {
        return Err(Error::DegenerateSample);
    }
    let u = diff / r;
    let p = x.len();
    let mut m = DMatrix::identity(p, p);
    for i in 0..p {
        for j in 0..p {
            m[(i, j)] = (m[(i, j)] - u[i] * u[j]) / r;
        }
    }
    Ok(m)
}
