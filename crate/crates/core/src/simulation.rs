//! Monte-Carlo harness: seeded Gaussian stream generators with the standard
//! covariance structures, the offline Weiszfeld solver used as a validation
//! oracle, and the MSE / empirical-level experiment runners.
//!
//! Replications are embarrassingly parallel; every stream of randomness is
//! derived from the master seed and a fixed tag, so results are bit-identical
//! regardless of thread schedule.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance_stream::CovarianceAccumulator;
use crate::error::{Error, Result};
use crate::estimators::{Algorithm, HyperParams, MedianEstimator};
use crate::hessian_stream::PlugInHessianAccumulator;
use crate::inference::chi_square_test;
use crate::linalg::cholesky;
use crate::median_objective::coincidence_eps;

/// SplitMix64-style seed derivation: one derived stream per (master, tags).
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    let mut state = master ^ 0x9e37_79b9_7f4a_7c15;
    for &t in tags {
        state = state.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(t);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        state = z ^ (z >> 31);
    }
    state
}

fn rng_for(master: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, tags))
}

fn standard_gaussian(p: usize, rng: &mut impl Rng) -> DVector<f64> {
    DVector::from_fn(p, |_, _| rng.sample(StandardNormal))
}

/// Covariance structure of the simulated Gaussian observations.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovStructure {
    /// Σ_ij = ρ^|i-j| (ρ = 0.5 by default).
    ToeplitzHalf {
        p: usize,
        #[serde(default = "default_rho")]
        rho: f64,
    },
    /// Diagonal with one dominant variance (1000 by default), all others 1.
    Spiked {
        p: usize,
        #[serde(default = "default_top_variance")]
        top_variance: f64,
    },
    /// Explicit symmetric positive-definite matrix, row by row.
    Custom { matrix: Vec<Vec<f64>> },
}

fn default_rho() -> f64 {
    0.5
}

fn default_top_variance() -> f64 {
    1000.0
}

impl CovStructure {
    pub fn toeplitz_half(p: usize) -> Self {
        CovStructure::ToeplitzHalf { p, rho: 0.5 }
    }

    pub fn spiked(p: usize) -> Self {
        CovStructure::Spiked {
            p,
            top_variance: 1000.0,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            CovStructure::ToeplitzHalf { p, .. } | CovStructure::Spiked { p, .. } => *p,
            CovStructure::Custom { matrix } => matrix.len(),
        }
    }

    /// Realizes the covariance matrix; a custom matrix must be square.
    pub fn matrix(&self) -> Result<DMatrix<f64>> {
        match self {
            CovStructure::ToeplitzHalf { p, rho } => {
                if *p < 2 {
                    return Err(Error::Config("cov_structure: p must be >= 2".into()));
                }
                Ok(DMatrix::from_fn(*p, *p, |i, j| {
                    rho.powi((i as i32 - j as i32).abs())
                }))
            }
            CovStructure::Spiked { p, top_variance } => {
                if *p < 2 {
                    return Err(Error::Config("cov_structure: p must be >= 2".into()));
                }
                if !(*top_variance > 0.0) {
                    return Err(Error::Config(
                        "cov_structure: top_variance must be positive".into(),
                    ));
                }
                let mut m = DMatrix::identity(*p, *p);
                m[(0, 0)] = *top_variance;
                Ok(m)
            }
            CovStructure::Custom { matrix } => {
                let p = matrix.len();
                if p < 2 || matrix.iter().any(|row| row.len() != p) {
                    return Err(Error::Config(
                        "cov_structure: custom matrix must be square with dimension >= 2".into(),
                    ));
                }
                Ok(DMatrix::from_fn(p, p, |i, j| matrix[i][j]))
            }
        }
    }
}

/// Seeded i.i.d. N(0, Σ) generator: draws are L·g with L the Cholesky factor
/// of Σ.
pub struct GaussianStream {
    l: DMatrix<f64>,
    rng: ChaCha8Rng,
    dim: usize,
}

impl GaussianStream {
    pub fn new(structure: &CovStructure, seed: u64) -> Result<Self> {
        let sigma = structure.matrix()?;
        // cholesky rejects non-SPD custom input here
        let l = cholesky(&sigma)?;
        Ok(Self {
            dim: l.nrows(),
            l,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn draw(&mut self) -> DVector<f64> {
        let g = standard_gaussian(self.dim, &mut self.rng);
        &self.l * g
    }
}

/// Result of the offline Weiszfeld solver.
#[derive(Debug, Clone)]
pub struct WeiszfeldResult {
    pub median: DVector<f64>,
    pub iterations: usize,
    /// Norm of the (sub)gradient of the empirical objective at the returned
    /// point.
    pub grad_norm: f64,
}

/// Offline sample geometric median by the iteratively reweighted fixed-point
/// scheme, with the modified rule capping the pull of a data point the
/// iterate currently coincides with.
///
/// Converges when the empirical objective's (sub)gradient norm drops to
/// `tol`; otherwise reports non-convergence carrying the last iterate.
pub fn weiszfeld(samples: &[DVector<f64>], tol: f64, max_iter: usize) -> Result<WeiszfeldResult> {
    if samples.len() < 2 {
        return Err(Error::Config(
            "weiszfeld requires at least two points".into(),
        ));
    }
    let p = samples[0].len();
    if samples.iter().any(|s| s.len() != p) {
        return Err(Error::DimensionMismatch {
            expected: p,
            found: samples.iter().map(|s| s.len()).find(|&l| l != p).unwrap(),
        });
    }
    let n = samples.len() as f64;

    // start from the centroid
    let mut m = DVector::zeros(p);
    for s in samples {
        m += s;
    }
    m /= n;

    let mut grad_norm = f64::INFINITY;
    for iter in 0..max_iter {
        let eps = coincidence_eps(&m);
        let mut weight_sum = 0.0;
        let mut weighted = DVector::zeros(p);
        let mut pull = DVector::zeros(p); // Σ (x_i - m)/‖x_i - m‖ over non-coincident points
        let mut multiplicity = 0.0;
        for s in samples {
            let diff = s - &m;
            let r = diff.norm();
            if r <= eps {
                multiplicity += 1.0;
            } else {
                weight_sum += 1.0 / r;
                weighted += s / r;
                pull += diff / r;
            }
        }
        let pull_norm = pull.norm();

        // distance from zero to the subdifferential of the empirical objective
        grad_norm = if multiplicity == 0.0 {
            pull_norm / n
        } else {
            (pull_norm - multiplicity).max(0.0) / n
        };
        if grad_norm <= tol {
            return Ok(WeiszfeldResult {
                median: m,
                iterations: iter,
                grad_norm,
            });
        }

        let t = weighted / weight_sum;
        if multiplicity == 0.0 {
            m = t;
        } else {
            // coincident point's pull capped at its multiplicity
            let ratio = (multiplicity / pull_norm).min(1.0);
            m = (1.0 - ratio) * t + ratio * m;
        }
    }
    Err(Error::NonConvergence {
        last: m,
        iterations: max_iter,
        grad_norm,
    })
}

/// Declarative description of one Monte-Carlo experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub p: usize,
    /// Stream length per replication.
    pub n: usize,
    /// Number of Monte-Carlo replications.
    pub replications: usize,
    pub algorithms: Vec<Algorithm>,
    /// m₀ = init_radius · U with U standard Gaussian, fresh per replication.
    pub init_radius: f64,
    pub seed: u64,
    pub cov_structure: CovStructure,
    /// Sample sizes at which MSE is recorded; a 30-point logarithmic grid by
    /// default.
    #[serde(default)]
    pub record_grid: Option<Vec<usize>>,
    #[serde(flatten, default)]
    pub hyperparams: HyperParams,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p < 2 {
            return Err(Error::Config("p: must be >= 2".into()));
        }
        if self.n < 1 {
            return Err(Error::Config("n: must be >= 1".into()));
        }
        if self.replications < 1 {
            return Err(Error::Config("replications: must be >= 1".into()));
        }
        if self.algorithms.is_empty() {
            return Err(Error::Config("algorithms: must not be empty".into()));
        }
        if self.cov_structure.dim() != self.p {
            return Err(Error::Config(format!(
                "cov_structure: dimension {} does not match p = {}",
                self.cov_structure.dim(),
                self.p
            )));
        }
        if !(self.init_radius >= 0.0 && self.init_radius.is_finite()) {
            return Err(Error::Config("init_radius: must be >= 0".into()));
        }
        if let Some(grid) = &self.record_grid {
            if grid.is_empty() || grid.iter().any(|&g| g < 1 || g > self.n) {
                return Err(Error::Config(
                    "record_grid: entries must lie in [1, n]".into(),
                ));
            }
            if grid.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Config(
                    "record_grid: must be strictly increasing".into(),
                ));
            }
        }
        self.cov_structure.matrix()?;
        self.hyperparams.validate()
    }

    /// The grid actually recorded: the configured one, or 30 log-spaced sizes.
    pub fn effective_grid(&self) -> Vec<usize> {
        match &self.record_grid {
            Some(g) => g.clone(),
            None => default_record_grid(self.n),
        }
    }
}

/// 30 log-spaced sample sizes in [10, n] (deduplicated, always ending at n).
pub fn default_record_grid(n: usize) -> Vec<usize> {
    let lo = 10usize.min(n);
    let (lo_f, hi_f) = ((lo as f64).ln(), (n as f64).ln());
    let mut grid: Vec<usize> = (0..30)
        .map(|i| {
            let t = i as f64 / 29.0;
            (lo_f + t * (hi_f - lo_f)).exp().round() as usize
        })
        .map(|v| v.clamp(1, n))
        .collect();
    grid.sort_unstable();
    grid.dedup();
    grid
}

/// One aggregated MSE estimate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MsePoint {
    pub algorithm: Algorithm,
    pub n: usize,
    pub mse: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MseResult {
    pub config: ExperimentConfig,
    pub points: Vec<MsePoint>,
}

impl MseResult {
    /// Final-size MSE for one algorithm.
    pub fn final_mse(&self, algorithm: Algorithm) -> Option<f64> {
        self.points
            .iter()
            .filter(|pt| pt.algorithm == algorithm)
            .max_by_key(|pt| pt.n)
            .map(|pt| pt.mse)
    }

    /// Least-squares slope of ln(MSE) against ln(n) over grid points with
    /// n ∈ [lo, hi].
    pub fn loglog_slope(&self, algorithm: Algorithm, lo: usize, hi: usize) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .points
            .iter()
            .filter(|pt| pt.algorithm == algorithm && pt.n >= lo && pt.n <= hi && pt.mse > 0.0)
            .map(|pt| ((pt.n as f64).ln(), pt.mse.ln()))
            .collect();
        if pts.len() < 3 {
            return None;
        }
        let n = pts.len() as f64;
        let mean_x = pts.iter().map(|(x, _)| x).sum::<f64>() / n;
        let mean_y = pts.iter().map(|(_, y)| y).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|(x, y)| (x - mean_x) * (y - mean_y)).sum();
        let sxx: f64 = pts.iter().map(|(x, _)| (x - mean_x) * (x - mean_x)).sum();
        Some(sxy / sxx)
    }
}

/// Empirical level of the chi-squared test for one algorithm, with the raw
/// statistics retained for distributional checks.
#[derive(Debug, Clone, Serialize)]
pub struct LevelRow {
    pub algorithm: Algorithm,
    pub n: usize,
    pub rejection_rate: f64,
    pub std_error: f64,
    pub z_statistics: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LevelResult {
    pub config: ExperimentConfig,
    pub alpha: f64,
    pub rows: Vec<LevelRow>,
}

// randomness stream tags
const TAG_DATA: u64 = 1;
const TAG_INIT: u64 = 2;
const TAG_Z_BASE: u64 = 16;

fn algorithm_tag(a: Algorithm) -> u64 {
    match a {
        Algorithm::Asgd => 0,
        Algorithm::Sn => 1,
        Algorithm::Asn => 2,
        Algorithm::Wasn => 3,
    }
}

fn initial_point(cfg: &ExperimentConfig, rep: u64) -> DVector<f64> {
    let mut rng = rng_for(cfg.seed, &[rep, TAG_INIT]);
    cfg.init_radius * standard_gaussian(cfg.p, &mut rng)
}

/// Mean squared error ‖m − m̂‖² against the true median 0 of the centered
/// Gaussian streams, averaged over replications and recorded along the grid.
pub fn run_mse_experiment(cfg: &ExperimentConfig) -> Result<MseResult> {
    cfg.validate()?;
    let grid = cfg.effective_grid();

    // [rep][algo][grid point] squared error
    let per_rep: Vec<Vec<Vec<f64>>> = (0..cfg.replications as u64)
        .into_par_iter()
        .map(|rep| mse_one_replication(cfg, rep, &grid))
        .collect::<Result<_>>()?;

    let n_rep = cfg.replications as f64;
    let mut points = Vec::with_capacity(cfg.algorithms.len() * grid.len());
    for (ai, &algorithm) in cfg.algorithms.iter().enumerate() {
        for (gi, &n) in grid.iter().enumerate() {
            let values: Vec<f64> = per_rep.iter().map(|r| r[ai][gi]).collect();
            let mean = values.iter().sum::<f64>() / n_rep;
            let var = if values.len() > 1 {
                values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n_rep - 1.0)
            } else {
                0.0
            };
            points.push(MsePoint {
                algorithm,
                n,
                mse: mean,
                std_error: (var / n_rep).sqrt(),
            });
        }
    }
    Ok(MseResult {
        config: cfg.clone(),
        points,
    })
}

fn mse_one_replication(
    cfg: &ExperimentConfig,
    rep: u64,
    grid: &[usize],
) -> Result<Vec<Vec<f64>>> {
    let mut stream = GaussianStream::new(&cfg.cov_structure, derive_seed(cfg.seed, &[rep, TAG_DATA]))?;
    let m0 = initial_point(cfg, rep);

    let mut estimators = Vec::with_capacity(cfg.algorithms.len());
    let mut z_rngs = Vec::with_capacity(cfg.algorithms.len());
    for &algo in &cfg.algorithms {
        estimators.push(MedianEstimator::new(algo, m0.clone(), &cfg.hyperparams)?);
        z_rngs.push(rng_for(cfg.seed, &[rep, TAG_Z_BASE + algorithm_tag(algo)]));
    }

    let mut errors = vec![vec![0.0; grid.len()]; estimators.len()];
    let mut next_grid = 0usize;
    for k in 1..=cfg.n {
        let x = stream.draw();
        for (ai, est) in estimators.iter_mut().enumerate() {
            let z = standard_gaussian(cfg.p, &mut z_rngs[ai]);
            est.step(&x, &z);
        }
        if next_grid < grid.len() && grid[next_grid] == k {
            for (ai, est) in estimators.iter().enumerate() {
                errors[ai][next_grid] = est.estimate().norm_squared();
            }
            next_grid += 1;
        }
    }
    Ok(errors)
}

/// Empirical level of the chi-squared test of H₀: m = 0 at significance
/// `alpha`, per algorithm, with the covariance and plug-in Hessian
/// accumulators driven at the pre-step estimate m̃_{k-1}.
pub fn run_level_experiment(cfg: &ExperimentConfig, alpha: f64) -> Result<LevelResult> {
    cfg.validate()?;
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(Error::Config("alpha must lie in (0, 1)".into()));
    }

    // [rep][algo] (statistic, reject)
    let per_rep: Vec<Vec<(f64, bool)>> = (0..cfg.replications as u64)
        .into_par_iter()
        .map(|rep| level_one_replication(cfg, rep, alpha))
        .collect::<Result<_>>()?;

    let n_rep = cfg.replications as f64;
    let mut rows = Vec::with_capacity(cfg.algorithms.len());
    for (ai, &algorithm) in cfg.algorithms.iter().enumerate() {
        let z_statistics: Vec<f64> = per_rep.iter().map(|r| r[ai].0).collect();
        let rejections = per_rep.iter().filter(|r| r[ai].1).count() as f64;
        let rate = rejections / n_rep;
        rows.push(LevelRow {
            algorithm,
            n: cfg.n,
            rejection_rate: rate,
            std_error: (rate * (1.0 - rate) / n_rep).sqrt(),
            z_statistics,
        });
    }
    Ok(LevelResult {
        config: cfg.clone(),
        alpha,
        rows,
    })
}

fn level_one_replication(
    cfg: &ExperimentConfig,
    rep: u64,
    alpha: f64,
) -> Result<Vec<(f64, bool)>> {
    let mut stream = GaussianStream::new(&cfg.cov_structure, derive_seed(cfg.seed, &[rep, TAG_DATA]))?;
    let m0 = initial_point(cfg, rep);
    let m_test = DVector::zeros(cfg.p);

    let mut lanes = Vec::with_capacity(cfg.algorithms.len());
    for &algo in &cfg.algorithms {
        lanes.push((
            MedianEstimator::new(algo, m0.clone(), &cfg.hyperparams)?,
            CovarianceAccumulator::identity(cfg.p),
            PlugInHessianAccumulator::identity(cfg.p),
            rng_for(cfg.seed, &[rep, TAG_Z_BASE + algorithm_tag(algo)]),
        ));
    }

    for _ in 0..cfg.n {
        let x = stream.draw();
        for (est, cov, plug, z_rng) in lanes.iter_mut() {
            cov.update(&x, est.estimate());
            plug.update(&x, est.estimate());
            let z = standard_gaussian(cfg.p, z_rng);
            est.step(&x, &z);
        }
    }

    let mut out = Vec::with_capacity(lanes.len());
    for (est, cov, plug, _) in &lanes {
        let res = chi_square_test(
            est.estimate(),
            &plug.h_star(),
            &cov.sigma_bar_inv(),
            &m_test,
            est.n(),
            alpha,
        )?;
        out.push((res.statistic, res.reject));
    }
    Ok(out)
}

/// Empirical objective (1/N)·Σ‖x_i − m‖, the quantity Weiszfeld minimizes.
pub fn empirical_objective(samples: &[DVector<f64>], m: &DVector<f64>) -> f64 {
    samples.iter().map(|s| (s - m).norm()).sum::<f64>() / samples.len() as f64
}
