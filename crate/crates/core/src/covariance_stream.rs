//! Online estimation of Σ = E[∇g(X,m)∇g(X,m)ᵀ] at a moving estimate.
//!
//! The accumulator keeps the unnormalized sum S = Σ₀ + Σ u_k u_kᵀ of unit
//! directions u_k = (x_k − m̃_{k-1})/‖x_k − m̃_{k-1}‖ and maintains S⁻¹ by a
//! weight-one Sherman-Morrison update per sample.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{is_finite_mat, is_symmetric, rank_one_inverse_update, spd_inverse};
use crate::median_objective::coincidence_eps;

#[derive(Debug, Clone)]
pub struct CovarianceAccumulator {
    dim: usize,
    n: usize,
    skipped: usize,
    /// Unnormalized sum S = Σ₀ + Σ u uᵀ.
    s: DMatrix<f64>,
    /// Maintained inverse of S.
    w_inv: DMatrix<f64>,
}

impl CovarianceAccumulator {
    /// Seeds with a symmetric positive-definite Σ₀ (identity by default in
    /// every experiment).
    pub fn new(sigma0: DMatrix<f64>) -> Result<Self> {
        if sigma0.nrows() != sigma0.ncols() || sigma0.nrows() < 2 {
            return Err(Error::Config(
                "Sigma0 must be square with dimension >= 2".into(),
            ));
        }
        if !is_finite_mat(&sigma0) {
            return Err(Error::NonFiniteInput("Sigma0"));
        }
        if !is_symmetric(&sigma0, 1e-12) {
            return Err(Error::Config("Sigma0 must be symmetric".into()));
        }
        let w_inv = spd_inverse(&sigma0)?;
        Ok(Self {
            dim: sigma0.nrows(),
            n: 0,
            skipped: 0,
            s: sigma0,
            w_inv,
        })
    }

    pub fn identity(p: usize) -> Self {
        Self::new(DMatrix::identity(p, p)).expect("identity seed")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn skipped(&self) -> usize {
        self.skipped
    }

    pub fn unnormalized(&self) -> &DMatrix<f64> {
        &self.s
    }

    pub fn inverse_unnormalized(&self) -> &DMatrix<f64> {
        &self.w_inv
    }

    /// Σ̄_n = S/(n+1).
    pub fn sigma_bar(&self) -> DMatrix<f64> {
        &self.s / (self.n as f64 + 1.0)
    }

    /// Σ̄_n⁻¹ = (n+1)·S⁻¹.
    pub fn sigma_bar_inv(&self) -> DMatrix<f64> {
        (self.n as f64 + 1.0) * &self.w_inv
    }

    /// Absorbs the unit direction from `m_tilde` (the pre-update estimate of
    /// the driving algorithm) towards `x`. A coincident sample is skipped
    /// entirely, leaving only the counters updated.
    pub fn update(&mut self, x: &DVector<f64>, m_tilde: &DVector<f64>) {
        assert_eq!(x.len(), self.dim, "observation dimension");
        assert_eq!(m_tilde.len(), self.dim, "estimate dimension");
        let diff = x - m_tilde;
        let r = diff.norm();
        if r <= coincidence_eps(x) {
            self.skipped += 1;
        } else {
            let u = diff / r;
            self.s += &u * u.transpose();
            crate::linalg::symmetrize(&mut self.s);
            rank_one_inverse_update(&mut self.w_inv, &u, 1.0)
                .expect("covariance rank-one update");
        }
        self.n += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian_vec(p: usize, rng: &mut impl Rng) -> DVector<f64> {
        DVector::from_fn(p, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn single_basis_sample() {
        let mut acc = CovarianceAccumulator::identity(2);
        // u = e1: x chosen so x - m is along e1
        acc.update(
            &DVector::from_vec(vec![3.0, 0.0]),
            &DVector::from_vec(vec![0.0, 0.0]),
        );
        let expected = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.5]));
        assert!((acc.sigma_bar() - expected).norm() < 1e-15);
        let expected_inv = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 1.0]));
        assert!((acc.inverse_unnormalized() - &expected_inv).norm() < 1e-15);
    }

    #[test]
    fn empty_accumulator_returns_seed() {
        let acc = CovarianceAccumulator::identity(3);
        assert_eq!(acc.sigma_bar(), DMatrix::identity(3, 3));
        assert_eq!(acc.sigma_bar_inv(), DMatrix::identity(3, 3));
    }

    #[test]
    fn trace_identity_and_inverse_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = 4;
        let mut acc = CovarianceAccumulator::identity(p);
        let m = DVector::zeros(p);
        for k in 0..500 {
            if k % 97 == 0 {
                acc.update(&m.clone(), &m); // coincident, skipped
            } else {
                acc.update(&gaussian_vec(p, &mut rng), &m);
            }
        }
        let n_eff = (acc.n() - acc.skipped()) as f64;
        let trace: f64 = acc.unnormalized().trace();
        assert!((trace - (n_eff + p as f64)).abs() < 1e-9);

        let prod = acc.sigma_bar() * acc.sigma_bar_inv();
        let dev = (&prod - DMatrix::identity(p, p))
            .iter()
            .fold(0.0f64, |mx, v| mx.max(v.abs()));
        assert!(dev < 1e-6, "sigma_bar * sigma_bar_inv deviates by {dev}");
    }

    #[test]
    fn matches_batch_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = 3;
        let mut acc = CovarianceAccumulator::identity(p);
        let mut batch = DMatrix::identity(p, p);
        let mut m = gaussian_vec(p, &mut rng);
        for _ in 0..200 {
            let x = gaussian_vec(p, &mut rng);
            acc.update(&x, &m);
            let u = (&x - &m) / (&x - &m).norm();
            batch += &u * u.transpose();
            m += 0.01 * gaussian_vec(p, &mut rng);
        }
        batch /= 201.0;
        assert!((acc.sigma_bar() - batch).norm() < 1e-10);
    }

    #[test]
    fn eigenvalues_stay_in_projection_band() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = 3;
        let mut acc = CovarianceAccumulator::identity(p);
        let m = DVector::zeros(p);
        for _ in 0..100 {
            acc.update(&gaussian_vec(p, &mut rng), &m);
        }
        let eig = nalgebra::SymmetricEigen::new(acc.sigma_bar());
        let lo = 1.0 / (acc.n() as f64 + 1.0);
        for &l in eig.eigenvalues.iter() {
            assert!(l >= lo - 1e-12 && l <= 2.0 + 1e-12);
        }
    }
}
