//! Online curvature estimation at a moving estimate.
//!
//! [`HessianAccumulator`] maintains the unnormalized regularized Hessian sum
//!
//! ```text
//! A_n = H0 + Σ_{k≤n} (‖x_k − m_{k-1}‖/α_k²) φ_k φ_kᵀ + Σ_{k≤n} β_k z_k z_kᵀ
//! ```
//!
//! together with its inverse `M = A⁻¹`, kept current by two Sherman-Morrison
//! updates per sample. The normalized estimate of the objective's Hessian is
//! `A_n/(n+1)`, and `M` itself is exactly the Newton step matrix
//! `(n+1)⁻¹·(A_n/(n+1))⁻¹` the stochastic Newton recursion consumes, so no
//! per-step rescaling is ever needed.
//!
//! [`PlugInHessianAccumulator`] is the simpler running average of exact
//! per-sample Hessians used by the chi-squared test statistic.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{is_finite_mat, is_symmetric, rank_one_inverse_update, spd_inverse};
use crate::median_objective::{coincidence_eps, grad_g};

/// Perturbation scale α_k = 1/(k·ln(k+1)), k ≥ 1 (natural logarithm).
pub fn alpha_step(k: usize) -> f64 {
    debug_assert!(k >= 1);
    1.0 / (k as f64 * ((k + 1) as f64).ln())
}

/// Schedule of the eigenvalue-regularizer weights β_k.
///
/// `Sn` uses β_k = c_β·k^(−β) with β ∈ (0, 1/2); `Wasn` uses
/// β_k = c_β·k^(−(1−β)). `None` disables the regularizer entirely, which is
/// the form the confidence-interval matrix S̄_n requires.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BetaSchedule {
    None,
    Sn { c_beta: f64, beta: f64 },
    Wasn { c_beta: f64, beta: f64 },
}

impl BetaSchedule {
    pub fn sn(c_beta: f64, beta: f64) -> Result<Self> {
        if !(c_beta > 0.0 && c_beta.is_finite()) {
            return Err(Error::Config(format!("c_beta must be positive, got {c_beta}")));
        }
        if !(0.0 < beta && beta < 0.5) {
            return Err(Error::Config(format!(
                "SN regularizer exponent must lie in (0, 1/2), got {beta}"
            )));
        }
        Ok(BetaSchedule::Sn { c_beta, beta })
    }

    /// The WASN schedule additionally requires β < γ − 1/2 for the step
    /// exponent γ in use; that coupling is validated where γ is known.
    pub fn wasn(c_beta: f64, beta: f64) -> Result<Self> {
        if !(c_beta > 0.0 && c_beta.is_finite()) {
            return Err(Error::Config(format!("c_beta must be positive, got {c_beta}")));
        }
        if !(0.0 < beta && beta < 0.5) {
            return Err(Error::Config(format!(
                "WASN regularizer exponent must lie in (0, 1/2), got {beta}"
            )));
        }
        Ok(BetaSchedule::Wasn { c_beta, beta })
    }

    /// β_k for k ≥ 1; zero when the schedule is `None`.
    pub fn value(&self, k: usize) -> f64 {
        debug_assert!(k >= 1);
        let k = k as f64;
        match *self {
            BetaSchedule::None => 0.0,
            BetaSchedule::Sn { c_beta, beta } => c_beta * k.powf(-beta),
            BetaSchedule::Wasn { c_beta, beta } => c_beta * k.powf(-(1.0 - beta)),
        }
    }
}

/// Gradient difference Φ = ∇g(x, m + α·z) − ∇g(x, m).
///
/// Satisfies ‖Φ‖ ≤ 2α‖z‖/‖x − m‖. Either gradient being degenerate makes the
/// sample unusable for curvature.
pub fn phi(x: &DVector<f64>, m: &DVector<f64>, z: &DVector<f64>, alpha: f64) -> Result<DVector<f64>> {
    let eps = coincidence_eps(x);
    let g_at_m = grad_g(x, m, eps);
    if g_at_m.degenerate {
        return Err(Error::DegenerateSample);
    }
    let perturbed = m + alpha * z;
    let g_at_perturbed = grad_g(x, &perturbed, eps);
    if g_at_perturbed.degenerate {
        return Err(Error::DegenerateSample);
    }
    Ok(g_at_perturbed.grad - g_at_m.grad)
}

/// Streaming estimate of the objective's Hessian with a maintained inverse.
#[derive(Debug, Clone)]
pub struct HessianAccumulator {
    dim: usize,
    n: usize,
    skipped: usize,
    /// Unnormalized sum A = H0 + Σ w φφᵀ + Σ β zzᵀ.
    a: DMatrix<f64>,
    /// Maintained inverse M = A⁻¹.
    m: DMatrix<f64>,
    schedule: BetaSchedule,
}

impl HessianAccumulator {
    /// Seeds the accumulator with a symmetric positive-definite `h0`.
    pub fn new(h0: DMatrix<f64>, schedule: BetaSchedule) -> Result<Self> {
        if h0.nrows() != h0.ncols() || h0.nrows() < 2 {
            return Err(Error::Config(format!(
                "H0 must be square with dimension >= 2, got {}x{}",
                h0.nrows(),
                h0.ncols()
            )));
        }
        if !is_finite_mat(&h0) {
            return Err(Error::NonFiniteInput("H0"));
        }
        if !is_symmetric(&h0, 1e-12) {
            return Err(Error::Config("H0 must be symmetric".into()));
        }
        let m = spd_inverse(&h0)?;
        Ok(Self {
            dim: h0.nrows(),
            n: 0,
            skipped: 0,
            a: h0,
            m,
            schedule,
        })
    }

    /// Identity seed, the default in every experiment.
    pub fn identity(p: usize, schedule: BetaSchedule) -> Self {
        Self::new(DMatrix::identity(p, p), schedule).expect("identity seed is SPD")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Samples absorbed so far (including degenerate ones).
    pub fn n(&self) -> usize {
        self.n
    }

    /// Degenerate samples that contributed only their regularizer term.
    pub fn skipped(&self) -> usize {
        self.skipped
    }

    /// Unnormalized sum A.
    pub fn unnormalized(&self) -> &DMatrix<f64> {
        &self.a
    }

    /// Maintained inverse M = A⁻¹, which is also the stochastic Newton step
    /// matrix (n+1)⁻¹·H̃_n⁻¹.
    pub fn inverse_unnormalized(&self) -> &DMatrix<f64> {
        &self.m
    }

    /// Normalized Hessian estimate H̃_n = A/(n+1).
    pub fn h_tilde(&self) -> DMatrix<f64> {
        &self.a / (self.n as f64 + 1.0)
    }

    /// H̃_n⁻¹ = (n+1)·M.
    pub fn h_tilde_inverse(&self) -> DMatrix<f64> {
        (self.n as f64 + 1.0) * &self.m
    }

    /// M·g: the Newton displacement for a (negative) gradient g.
    pub fn newton_direction(&self, g: &DVector<f64>) -> DVector<f64> {
        &self.m * g
    }

    /// Absorbs one sample: the curvature term w·φφᵀ built at the estimate `m`
    /// (the pre-move estimate of the driving algorithm) plus the regularizer
    /// β_k·zzᵀ. A degenerate sample contributes only the regularizer so the
    /// schedule stays aligned with the iteration index.
    pub fn update(&mut self, x: &DVector<f64>, m: &DVector<f64>, z: &DVector<f64>) {
        assert_eq!(x.len(), self.dim, "observation dimension");
        assert_eq!(m.len(), self.dim, "estimate dimension");
        assert_eq!(z.len(), self.dim, "perturbation dimension");
        let k = self.n + 1;
        let alpha = alpha_step(k);

        match phi(x, m, z, alpha) {
            Ok(phi_k) => {
                let r = (x - m).norm();
                let w = r / (alpha * alpha);
                // φ = 0 (e.g. z = 0) adds nothing; skip the no-op update.
                if w > 0.0 && phi_k.iter().any(|v| *v != 0.0) {
                    self.a += w * &phi_k * phi_k.transpose();
                    rank_one_inverse_update(&mut self.m, &phi_k, w)
                        .expect("curvature rank-one update");
                }
            }
            Err(_) => {
                self.skipped += 1;
            }
        }

        let beta = self.schedule.value(k);
        if beta > 0.0 && z.iter().any(|v| *v != 0.0) {
            self.a += beta * z * z.transpose();
            rank_one_inverse_update(&mut self.m, z, beta).expect("regularizer rank-one update");
        }
        crate::linalg::symmetrize(&mut self.a);
        self.n = k;
    }
}

/// Running average of exact per-sample Hessians ∇²g(x_k, m̃_{k-1}) seeded with
/// a symmetric positive H̄*₀; powers the test statistic.
#[derive(Debug, Clone)]
pub struct PlugInHessianAccumulator {
    dim: usize,
    n: usize,
    skipped: usize,
    /// Unnormalized sum H̄*₀ + Σ ∇²g.
    sum: DMatrix<f64>,
}

impl PlugInHessianAccumulator {
    pub fn new(h0_star: DMatrix<f64>) -> Result<Self> {
        if h0_star.nrows() != h0_star.ncols() || h0_star.nrows() < 2 {
            return Err(Error::Config("H*0 must be square with dimension >= 2".into()));
        }
        if !is_finite_mat(&h0_star) {
            return Err(Error::NonFiniteInput("H*0"));
        }
        if !is_symmetric(&h0_star, 1e-12) {
            return Err(Error::Config("H*0 must be symmetric".into()));
        }
        Ok(Self {
            dim: h0_star.nrows(),
            n: 0,
            skipped: 0,
            sum: h0_star,
        })
    }

    pub fn identity(p: usize) -> Self {
        Self::new(DMatrix::identity(p, p)).expect("identity seed")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn skipped(&self) -> usize {
        self.skipped
    }

    /// H̄*_n = (Σ_{k≤n} ∇²g(x_k, m̃_{k-1}) + H̄*₀)/(n+1).
    pub fn h_star(&self) -> DMatrix<f64> {
        &self.sum / (self.n as f64 + 1.0)
    }

    pub fn update(&mut self, x: &DVector<f64>, m: &DVector<f64>) {
        assert_eq!(x.len(), self.dim, "observation dimension");
        assert_eq!(m.len(), self.dim, "estimate dimension");
        match crate::median_objective::hessian_g(x, m, coincidence_eps(x)) {
            Ok(h) => self.sum += h,
            Err(_) => self.skipped += 1,
        }
        self.n += 1;
    }
}
