//! Python bindings: the online median estimators, the inference tracker, the
//! offline Weiszfeld solver and the quantile helpers.
//!
//! Estimator classes draw their Gaussian perturbations from an internal
//! seeded generator, so runs replay deterministically for a given seed.

use nalgebra::DVector;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use geomedian::covariance_stream::CovarianceAccumulator;
use geomedian::estimators::{AsgdParams, AsgdState, NewtonState, SnParams, WasnParams, WasnState};
use geomedian::hessian_stream::{BetaSchedule, HessianAccumulator, PlugInHessianAccumulator};
use geomedian::median_objective::coincidence_eps;

fn err(e: geomedian::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn vector(values: Vec<f64>, dim: usize, what: &str) -> PyResult<DVector<f64>> {
    if values.len() != dim {
        return Err(PyValueError::new_err(format!(
            "{what} must have {dim} coordinates, got {}",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(PyValueError::new_err(format!(
            "{what} contains a non-finite value"
        )));
    }
    Ok(DVector::from_vec(values))
}

fn gaussian(p: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(p, |_, _| rng.sample(StandardNormal))
}

/// Averaged stochastic gradient descent for the geometric median.
#[pyclass]
struct Asgd {
    state: AsgdState,
    dim: usize,
}

#[pymethods]
impl Asgd {
    #[new]
    #[pyo3(signature = (m0, c_gamma=1.0, gamma=2.0/3.0))]
    fn new(m0: Vec<f64>, c_gamma: f64, gamma: f64) -> PyResult<Self> {
        let dim = m0.len();
        let state =
            AsgdState::new(DVector::from_vec(m0), AsgdParams { c_gamma, gamma }).map_err(err)?;
        Ok(Self { state, dim })
    }

    fn step(&mut self, x: Vec<f64>) -> PyResult<()> {
        let x = vector(x, self.dim, "observation")?;
        self.state.step(&x);
        Ok(())
    }

    /// The averaged iterate (the reported estimate).
    #[getter]
    fn estimate(&self) -> Vec<f64> {
        self.state.average().iter().copied().collect()
    }

    #[getter]
    fn n(&self) -> usize {
        self.state.n()
    }

    #[getter]
    fn skipped(&self) -> usize {
        self.state.skipped()
    }
}

/// Stochastic Newton estimator with a recursively maintained inverse Hessian.
#[pyclass]
struct StochasticNewton {
    state: NewtonState,
    rng: ChaCha8Rng,
    dim: usize,
}

#[pymethods]
impl StochasticNewton {
    #[new]
    #[pyo3(signature = (m0, c_beta=0.1, beta=0.49, seed=0))]
    fn new(m0: Vec<f64>, c_beta: f64, beta: f64, seed: u64) -> PyResult<Self> {
        let dim = m0.len();
        let state =
            NewtonState::new(DVector::from_vec(m0), SnParams { c_beta, beta }).map_err(err)?;
        Ok(Self {
            state,
            rng: ChaCha8Rng::seed_from_u64(seed),
            dim,
        })
    }

    fn step(&mut self, x: Vec<f64>) -> PyResult<()> {
        let x = vector(x, self.dim, "observation")?;
        let z = gaussian(self.dim, &mut self.rng);
        self.state.step(&x, &z);
        Ok(())
    }

    #[getter]
    fn estimate(&self) -> Vec<f64> {
        self.state.median().iter().copied().collect()
    }

    #[getter]
    fn n(&self) -> usize {
        self.state.n()
    }

    #[getter]
    fn skipped(&self) -> usize {
        self.state.skipped()
    }
}

/// Weighted averaged stochastic Newton (ASN when omega = 0).
#[pyclass]
struct Wasn {
    state: WasnState,
    rng: ChaCha8Rng,
    dim: usize,
}

#[pymethods]
impl Wasn {
    #[new]
    #[pyo3(signature = (m0, c_gamma=1.0, c_gamma_prime=0.0, gamma=2.0/3.0, omega=2.0, c_beta=1.0, beta=0.1, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        m0: Vec<f64>,
        c_gamma: f64,
        c_gamma_prime: f64,
        gamma: f64,
        omega: f64,
        c_beta: f64,
        beta: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let dim = m0.len();
        let params = WasnParams {
            c_gamma,
            c_gamma_prime,
            gamma,
            omega,
            c_beta,
            beta,
        };
        let state = WasnState::new(DVector::from_vec(m0), params).map_err(err)?;
        Ok(Self {
            state,
            rng: ChaCha8Rng::seed_from_u64(seed),
            dim,
        })
    }

    fn step(&mut self, x: Vec<f64>) -> PyResult<()> {
        let x = vector(x, self.dim, "observation")?;
        let z = gaussian(self.dim, &mut self.rng);
        self.state.step(&x, &z);
        Ok(())
    }

    /// The weighted average (the reported estimate).
    #[getter]
    fn estimate(&self) -> Vec<f64> {
        self.state.weighted_average().iter().copied().collect()
    }

    #[getter]
    fn fast_iterate(&self) -> Vec<f64> {
        self.state.fast_iterate().iter().copied().collect()
    }

    #[getter]
    fn n(&self) -> usize {
        self.state.n()
    }

    #[getter]
    fn skipped(&self) -> usize {
        self.state.skipped()
    }
}

/// Side-car accumulators for online inference: covariance, plug-in Hessian
/// and the unregularized curvature average, all driven at the pre-step
/// estimate of whatever estimator they accompany.
#[pyclass]
struct InferenceTracker {
    cov: CovarianceAccumulator,
    plug: PlugInHessianAccumulator,
    sbar: HessianAccumulator,
    rng: ChaCha8Rng,
    dim: usize,
}

#[pymethods]
impl InferenceTracker {
    #[new]
    #[pyo3(signature = (p, seed=1))]
    fn new(p: usize, seed: u64) -> PyResult<Self> {
        if p < 2 {
            return Err(PyValueError::new_err("p must be >= 2"));
        }
        Ok(Self {
            cov: CovarianceAccumulator::identity(p),
            plug: PlugInHessianAccumulator::identity(p),
            sbar: HessianAccumulator::identity(p, BetaSchedule::None),
            rng: ChaCha8Rng::seed_from_u64(seed),
            dim: p,
        })
    }

    /// Absorbs one observation at the current (pre-step) estimate.
    fn update(&mut self, x: Vec<f64>, estimate: Vec<f64>) -> PyResult<()> {
        let x = vector(x, self.dim, "observation")?;
        let m = vector(estimate, self.dim, "estimate")?;
        self.cov.update(&x, &m);
        self.plug.update(&x, &m);
        let z = gaussian(self.dim, &mut self.rng);
        self.sbar.update(&x, &m, &z);
        Ok(())
    }

    /// (center, half_width) of the confidence interval for direction·m.
    #[pyo3(signature = (estimate, direction, level=0.95))]
    fn confidence_interval(
        &self,
        estimate: Vec<f64>,
        direction: Vec<f64>,
        level: f64,
    ) -> PyResult<(f64, f64)> {
        let m = vector(estimate, self.dim, "estimate")?;
        let x0 = vector(direction, self.dim, "direction")?;
        let ci = geomedian::inference::confidence_interval(
            &m,
            &self.sbar.h_tilde_inverse(),
            &self.cov.sigma_bar(),
            &x0,
            level,
            self.cov.n(),
        )
        .map_err(err)?;
        Ok((ci.center, ci.half_width))
    }

    /// (statistic, p_value, reject) for the test of m = m_test.
    #[pyo3(signature = (estimate, m_test, alpha=0.05))]
    fn chi_square_test(
        &self,
        estimate: Vec<f64>,
        m_test: Vec<f64>,
        alpha: f64,
    ) -> PyResult<(f64, f64, bool)> {
        let m = vector(estimate, self.dim, "estimate")?;
        let m_test = vector(m_test, self.dim, "m_test")?;
        let res = geomedian::inference::chi_square_test(
            &m,
            &self.plug.h_star(),
            &self.cov.sigma_bar_inv(),
            &m_test,
            self.cov.n(),
            alpha,
        )
        .map_err(err)?;
        Ok((res.statistic, res.p_value, res.reject))
    }

    #[getter]
    fn n(&self) -> usize {
        self.cov.n()
    }
}

/// Offline sample geometric median; returns (median, iterations, grad_norm).
#[pyfunction]
#[pyo3(signature = (points, tol=1e-10, max_iter=10000))]
fn weiszfeld(points: Vec<Vec<f64>>, tol: f64, max_iter: usize) -> PyResult<(Vec<f64>, usize, f64)> {
    let samples: Vec<DVector<f64>> = points.into_iter().map(DVector::from_vec).collect();
    let res = geomedian::simulation::weiszfeld(&samples, tol, max_iter).map_err(err)?;
    Ok((
        res.median.iter().copied().collect(),
        res.iterations,
        res.grad_norm,
    ))
}

/// Per-sample loss ‖x − h‖ − ‖x‖.
#[pyfunction]
fn loss(x: Vec<f64>, h: Vec<f64>) -> PyResult<f64> {
    let x = DVector::from_vec(x);
    let h = vector(h, x.len(), "h")?;
    Ok(geomedian::median_objective::loss_g(&x, &h))
}

/// Per-sample gradient −(x − h)/‖x − h‖ (zero at coincidence).
#[pyfunction]
fn gradient(x: Vec<f64>, h: Vec<f64>) -> PyResult<Vec<f64>> {
    let x = DVector::from_vec(x);
    let h = vector(h, x.len(), "h")?;
    let eps = coincidence_eps(&x);
    Ok(geomedian::median_objective::grad_g(&x, &h, eps)
        .grad
        .iter()
        .copied()
        .collect())
}

/// Per-sample Hessian (1/r)(I − uuᵀ), row by row.
#[pyfunction]
fn hessian(x: Vec<f64>, h: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
    let x = DVector::from_vec(x);
    let h = vector(h, x.len(), "h")?;
    let eps = coincidence_eps(&x);
    let m = geomedian::median_objective::hessian_g(&x, &h, eps).map_err(err)?;
    Ok((0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect())
}

#[pyfunction]
fn normal_quantile(q: f64) -> PyResult<f64> {
    geomedian::inference::normal_quantile(q).map_err(err)
}

#[pyfunction]
fn chi_square_quantile(q: f64, dof: usize) -> PyResult<f64> {
    geomedian::inference::chi_square_quantile(q, dof).map_err(err)
}

#[pymodule]
fn geomedian_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Asgd>()?;
    m.add_class::<StochasticNewton>()?;
    m.add_class::<Wasn>()?;
    m.add_class::<InferenceTracker>()?;
    m.add_function(wrap_pyfunction!(weiszfeld, m)?)?;
    m.add_function(wrap_pyfunction!(loss, m)?)?;
    m.add_function(wrap_pyfunction!(gradient, m)?)?;
    m.add_function(wrap_pyfunction!(hessian, m)?)?;
    m.add_function(wrap_pyfunction!(normal_quantile, m)?)?;
    m.add_function(wrap_pyfunction!(chi_square_quantile, m)?)?;
    Ok(())
}
