//! The online median estimators: averaged stochastic gradient descent (ASGD),
//! stochastic Newton (SN) and its weighted/plain averaged variants (WASN/ASN).
//!
//! Each estimator is a single-writer state machine absorbing one observation
//! per step. Newton-type steps draw their direction from the accumulator
//! state *before* the sample is absorbed, and the accumulator is then fed the
//! pre-move estimate, which keeps the recursion aligned with the one-step
//! measurability structure the convergence guarantees rely on. Gaussian
//! perturbations are injected by the caller so runs replay deterministically.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hessian_stream::{BetaSchedule, HessianAccumulator};
use crate::median_objective::{coincidence_eps, grad_g};

/// Estimator selector used by the CLI and the experiment harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Asgd,
    Sn,
    Asn,
    Wasn,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::Asgd,
        Algorithm::Sn,
        Algorithm::Asn,
        Algorithm::Wasn,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Asgd => "asgd",
            Algorithm::Sn => "sn",
            Algorithm::Asn => "asn",
            Algorithm::Wasn => "wasn",
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "asgd" => Ok(Algorithm::Asgd),
            "sn" => Ok(Algorithm::Sn),
            "asn" => Ok(Algorithm::Asn),
            "wasn" => Ok(Algorithm::Wasn),
            other => Err(Error::Config(format!("unknown algorithm '{other}'"))),
        }
    }
}

/// ASGD step sizes γ_k = c_γ·k^(−γ) with γ ∈ (1/2, 1).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct AsgdParams {
    pub c_gamma: f64,
    pub gamma: f64,
}

impl Default for AsgdParams {
    fn default() -> Self {
        Self {
            c_gamma: 1.0,
            gamma: 2.0 / 3.0,
        }
    }
}

impl AsgdParams {
    fn validate(&self) -> Result<()> {
        if !(self.c_gamma > 0.0 && self.c_gamma.is_finite()) {
            return Err(Error::Config(format!(
                "asgd: c_gamma must be positive, got {}",
                self.c_gamma
            )));
        }
        if !(0.5 < self.gamma && self.gamma < 1.0) {
            return Err(Error::Config(format!(
                "asgd: gamma must lie in (1/2, 1), got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// Stochastic Newton hyperparameters (regularizer β_k = c_β·k^(−β)).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct SnParams {
    pub c_beta: f64,
    pub beta: f64,
}

// The eigenvalue floor only has to dominate early: a small constant and an
// exponent near the admissible upper end keep λ_min(A) growing like n^(1-β)
// while the preconditioner bias c_β·n^(-β) stays numerically negligible at
// experimental sample sizes. A heavier schedule visibly miscalibrates the
// Newton step and the chi-squared test.
impl Default for SnParams {
    fn default() -> Self {
        Self {
            c_beta: 0.1,
            beta: 0.49,
        }
    }
}

/// WASN hyperparameters: fast-iterate step c_γ·(n+1+c'_γ)^(−γ), averaging
/// weight exponent ω, regularizer β_k = c_β·k^(−(1−β)).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct WasnParams {
    pub c_gamma: f64,
    pub c_gamma_prime: f64,
    pub gamma: f64,
    pub omega: f64,
    pub c_beta: f64,
    pub beta: f64,
}

impl Default for WasnParams {
    fn default() -> Self {
        Self {
            c_gamma: 1.0,
            c_gamma_prime: 0.0,
            gamma: 2.0 / 3.0,
            omega: 2.0,
            c_beta: 1.0,
            beta: 0.1,
        }
    }
}

impl WasnParams {
    /// The plain averaged variant: uniform weights (ω = 0).
    pub fn asn() -> Self {
        Self {
            omega: 0.0,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.c_gamma > 0.0 && self.c_gamma.is_finite()) {
            return Err(Error::Config(format!(
                "wasn: c_gamma must be positive, got {}",
                self.c_gamma
            )));
        }
        if !(self.c_gamma_prime >= 0.0 && self.c_gamma_prime.is_finite()) {
            return Err(Error::Config(format!(
                "wasn: c_gamma_prime must be >= 0, got {}",
                self.c_gamma_prime
            )));
        }
        // γ = 1 is admitted: it collapses the fast-iterate step to 1/(n+1),
        // recovering the plain stochastic Newton recursion.
        if !(0.5 < self.gamma && self.gamma <= 1.0) {
            return Err(Error::Config(format!(
                "wasn: gamma must lie in (1/2, 1], got {}",
                self.gamma
            )));
        }
        if !(self.omega >= 0.0 && self.omega.is_finite()) {
            return Err(Error::Config(format!(
                "wasn: omega must be >= 0, got {}",
                self.omega
            )));
        }
        if self.beta >= self.gamma - 0.5 {
            return Err(Error::Config(format!(
                "wasn: beta must be < gamma - 1/2 = {}, got {}",
                self.gamma - 0.5,
                self.beta
            )));
        }
        Ok(())
    }
}

/// Hyperparameters for all four algorithms, as they appear in experiment and
/// CLI configuration.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperParams {
    pub asgd: AsgdParams,
    pub sn: SnParams,
    pub wasn: WasnParams,
    pub asn: WasnParams,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            asgd: AsgdParams::default(),
            sn: SnParams::default(),
            wasn: WasnParams::default(),
            asn: WasnParams::asn(),
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        self.asgd.validate()?;
        BetaSchedule::sn(self.sn.c_beta, self.sn.beta)?;
        self.wasn.validate()?;
        BetaSchedule::wasn(self.wasn.c_beta, self.wasn.beta)?;
        self.asn.validate()?;
        BetaSchedule::wasn(self.asn.c_beta, self.asn.beta)?;
        Ok(())
    }
}

/// Averaged stochastic gradient descent.
#[derive(Debug, Clone)]
pub struct AsgdState {
    m_sg: DVector<f64>,
    m_bar: DVector<f64>,
    n: usize,
    skipped: usize,
    params: AsgdParams,
}

impl AsgdState {
    pub fn new(m0: DVector<f64>, params: AsgdParams) -> Result<Self> {
        params.validate()?;
        if !crate::linalg::is_finite_vec(&m0) {
            return Err(Error::NonFiniteInput("m0"));
        }
        Ok(Self {
            m_bar: m0.clone(),
            m_sg: m0,
            n: 0,
            skipped: 0,
            params,
        })
    }

    /// One observation: the fast iterate moves by γ_{n+1} along the unit
    /// direction towards `x`; the running average always advances, so a
    /// coincident sample still counts.
    pub fn step(&mut self, x: &DVector<f64>) {
        let k = self.n + 1;
        let g = grad_g(x, &self.m_sg, coincidence_eps(x));
        if g.degenerate {
            self.skipped += 1;
        } else {
            let gamma_k = self.params.c_gamma * (k as f64).powf(-self.params.gamma);
            self.m_sg -= gamma_k * g.grad;
        }
        // running mean of the iterates produced so far
        let delta = (&self.m_sg - &self.m_bar) / k as f64;
        self.m_bar += delta;
        self.n = k;
    }

    pub fn sgd_iterate(&self) -> &DVector<f64> {
        &self.m_sg
    }

    /// Polyak-Ruppert average: the estimator's reported value.
    pub fn average(&self) -> &DVector<f64> {
        &self.m_bar
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn skipped(&self) -> usize {
        self.skipped
    }
}

/// Stochastic Newton: unit step 1/(n+1) preconditioned by the inverse of the
/// regularized Hessian estimate.
#[derive(Debug, Clone)]
pub struct NewtonState {
    m: DVector<f64>,
    skipped: usize,
    hess: HessianAccumulator,
}

impl NewtonState {
    pub fn new(m0: DVector<f64>, params: SnParams) -> Result<Self> {
        let schedule = BetaSchedule::sn(params.c_beta, params.beta)?;
        let hess = HessianAccumulator::identity(m0.len(), schedule);
        Self::with_hessian(m0, hess)
    }

    /// Builds on an existing accumulator (e.g. a custom H₀ or schedule).
    pub fn with_hessian(m0: DVector<f64>, hess: HessianAccumulator) -> Result<Self> {
        if m0.len() != hess.dim() {
            return Err(Error::DimensionMismatch {
                expected: hess.dim(),
                found: m0.len(),
            });
        }
        if !crate::linalg::is_finite_vec(&m0) {
            return Err(Error::NonFiniteInput("m0"));
        }
        Ok(Self {
            m: m0,
            skipped: 0,
            hess,
        })
    }

    /// Median move from the current accumulator, then the accumulator absorbs
    /// the sample at the pre-move estimate.
    pub fn step(&mut self, x: &DVector<f64>, z: &DVector<f64>) {
        let g = grad_g(x, &self.m, coincidence_eps(x));
        let m_prev = self.m.clone();
        if g.degenerate {
            self.skipped += 1;
        } else {
            // M = (n+1)^{-1} H̃_n^{-1}, so the step is exactly M·(x−m)/‖x−m‖.
            self.m += self.hess.newton_direction(&(-g.grad));
        }
        self.hess.update(x, &m_prev, z);
    }

    pub fn median(&self) -> &DVector<f64> {
        &self.m
    }

    pub fn hessian(&self) -> &HessianAccumulator {
        &self.hess
    }

    pub fn n(&self) -> usize {
        self.hess.n()
    }

    pub fn skipped(&self) -> usize {
        self.skipped
    }
}

/// Weighted averaged stochastic Newton: a fast iterate with step
/// c_γ·(n+1+c'_γ)^(−γ) and a log-power weighted average, with the Hessian
/// accumulator driven at the averaged estimate.
#[derive(Debug, Clone)]
pub struct WasnState {
    m_hat: DVector<f64>,
    m_tau: DVector<f64>,
    skipped: usize,
    params: WasnParams,
    /// Σ_{k≤n} ln(k+1)^ω (the k = 0 term vanishes for every ω).
    tau_denominator: f64,
    hess: HessianAccumulator,
}

impl WasnState {
    pub fn new(m0: DVector<f64>, params: WasnParams) -> Result<Self> {
        let schedule = BetaSchedule::wasn(params.c_beta, params.beta)?;
        let hess = HessianAccumulator::identity(m0.len(), schedule);
        Self::with_hessian(m0, params, hess)
    }

    pub fn with_hessian(
        m0: DVector<f64>,
        params: WasnParams,
        hess: HessianAccumulator,
    ) -> Result<Self> {
        params.validate()?;
        if m0.len() != hess.dim() {
            return Err(Error::DimensionMismatch {
                expected: hess.dim(),
                found: m0.len(),
            });
        }
        if !crate::linalg::is_finite_vec(&m0) {
            return Err(Error::NonFiniteInput("m0"));
        }
        Ok(Self {
            m_hat: m0.clone(),
            m_tau: m0,
            skipped: 0,
            params,
            tau_denominator: 0.0,
            hess,
        })
    }

    fn tau_weight(&self, k: usize) -> f64 {
        let l = ((k + 1) as f64).ln();
        if l == 0.0 {
            0.0
        } else {
            l.powf(self.params.omega)
        }
    }

    /// Fast-iterate move (direction from the accumulator built at the
    /// weighted-average history), then the weighted average, then the
    /// accumulator absorbs the sample at the pre-update average.
    pub fn step(&mut self, x: &DVector<f64>, z: &DVector<f64>) {
        let n = self.hess.n();
        let g = grad_g(x, &self.m_hat, coincidence_eps(x));
        if g.degenerate {
            self.skipped += 1;
        } else {
            let step =
                self.params.c_gamma / (n as f64 + 1.0 + self.params.c_gamma_prime).powf(self.params.gamma);
            // H̃_{n,τ}^{-1} = (n+1)·M
            let dir = self.hess.newton_direction(&(-g.grad)) * (n as f64 + 1.0);
            self.m_hat += step * dir;
        }

        let w = self.tau_weight(n + 1);
        self.tau_denominator += w;
        let tau = if self.tau_denominator > 0.0 {
            w / self.tau_denominator
        } else {
            0.0
        };
        let m_tau_prev = self.m_tau.clone();
        self.m_tau = (1.0 - tau) * &self.m_tau + tau * &self.m_hat;

        self.hess.update(x, &m_tau_prev, z);
    }

    /// The weighted average m_τ: the estimator's reported value.
    pub fn weighted_average(&self) -> &DVector<f64> {
        &self.m_tau
    }

    pub fn fast_iterate(&self) -> &DVector<f64> {
        &self.m_hat
    }

    pub fn tau_denominator(&self) -> f64 {
        self.tau_denominator
    }

    pub fn hessian(&self) -> &HessianAccumulator {
        &self.hess
    }

    pub fn n(&self) -> usize {
        self.hess.n()
    }

    pub fn skipped(&self) -> usize {
        self.skipped
    }
}

/// Algorithm-erased estimator for the CLI and the experiment harness.
#[derive(Debug, Clone)]
pub enum MedianEstimator {
    Asgd(AsgdState),
    Newton(NewtonState),
    Wasn(WasnState),
}

impl MedianEstimator {
    pub fn new(algorithm: Algorithm, m0: DVector<f64>, hp: &HyperParams) -> Result<Self> {
        match algorithm {
            Algorithm::Asgd => Ok(MedianEstimator::Asgd(AsgdState::new(m0, hp.asgd)?)),
            Algorithm::Sn => Ok(MedianEstimator::Newton(NewtonState::new(m0, hp.sn)?)),
            Algorithm::Asn => {
                // ASN is WASN with uniform weights by definition.
                let params = WasnParams {
                    omega: 0.0,
                    ..hp.asn
                };
                Ok(MedianEstimator::Wasn(WasnState::new(m0, params)?))
            }
            Algorithm::Wasn => Ok(MedianEstimator::Wasn(WasnState::new(m0, hp.wasn)?)),
        }
    }

    /// Absorbs one observation; `z` is ignored by ASGD.
    pub fn step(&mut self, x: &DVector<f64>, z: &DVector<f64>) {
        match self {
            MedianEstimator::Asgd(s) => s.step(x),
            MedianEstimator::Newton(s) => s.step(x, z),
            MedianEstimator::Wasn(s) => s.step(x, z),
        }
    }

    /// The reported median estimate (the averaged iterate where one exists).
    pub fn estimate(&self) -> &DVector<f64> {
        match self {
            MedianEstimator::Asgd(s) => s.average(),
            MedianEstimator::Newton(s) => s.median(),
            MedianEstimator::Wasn(s) => s.weighted_average(),
        }
    }

    pub fn n(&self) -> usize {
        match self {
            MedianEstimator::Asgd(s) => s.n(),
            MedianEstimator::Newton(s) => s.n(),
            MedianEstimator::Wasn(s) => s.n(),
        }
    }

    pub fn skipped(&self) -> usize {
        match self {
            MedianEstimator::Asgd(s) => s.skipped(),
            MedianEstimator::Newton(s) => s.skipped(),
            MedianEstimator::Wasn(s) => s.skipped(),
        }
    }
}
