//! Command front door: streaming estimation over CSV/JSONL files, Monte-Carlo
//! experiment reproduction, and the offline Weiszfeld oracle.
//!
//! Exit codes: 0 success, 2 input/config error, 3 I/O error, 4 oracle
//! non-convergence. Every run with an output directory also writes a
//! `manifest.json` (resolved configuration, seed, version, timestamps, input
//! checksums) sufficient to reproduce the result files byte-identically.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::covariance_stream::CovarianceAccumulator;
use crate::error::Error;
use crate::estimators::{Algorithm, HyperParams, MedianEstimator};
use crate::hessian_stream::{BetaSchedule, HessianAccumulator, PlugInHessianAccumulator};
use crate::inference::{chi_square_test, confidence_interval};
use crate::simulation::{
    derive_seed, run_level_experiment, run_mse_experiment, weiszfeld, ExperimentConfig,
    LevelResult, MseResult,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NONCONVERGENCE: i32 = 4;

/// Default seed: a fixed constant, so default runs are reproducible.
pub const DEFAULT_SEED: u64 = 1729;

/// A command failure with its process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn input(msg: impl Into<String>) -> Self {
        Self {
            code: EXIT_INPUT,
            message: msg.into(),
        }
    }

    pub fn io(msg: impl Into<String>) -> Self {
        Self {
            code: EXIT_IO,
            message: msg.into(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::NonConvergence { .. } => Self {
                code: EXIT_NONCONVERGENCE,
                message: e.to_string(),
            },
            _ => Self::input(e.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

// ---------------------------------------------------------------------------
// input: streaming CSV/JSONL reader with a running checksum
// ---------------------------------------------------------------------------

struct HashingReader<R: Read> {
    inner: R,
    hasher: Sha256,
}

impl<R: Read> Read for HashingReader<R> {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.hasher.update(&buf[..n]);
        Ok(n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum InputFormat {
    Csv,
    Jsonl,
}

/// One-pass observation reader: fixed O(p) state per row, never loads the
/// file. Numbers are parsed locale-independently with '.' as the decimal
/// separator; NaN/Inf rows are rejected.
pub struct ObservationReader {
    reader: BufReader<HashingReader<File>>,
    path: String,
    format: InputFormat,
    line_no: usize,
    dim: Option<usize>,
    buf: String,
}

impl ObservationReader {
    pub fn open(path: &Path) -> CliResult<Self> {
        let file = File::open(path)
            .map_err(|e| CliError::io(format!("cannot open {}: {e}", path.display())))?;
        let format = match path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref()
        {
            Some("jsonl") | Some("ndjson") | Some("json") => InputFormat::Jsonl,
            _ => InputFormat::Csv,
        };
        Ok(Self {
            reader: BufReader::new(HashingReader {
                inner: file,
                hasher: Sha256::new(),
            }),
            path: path.display().to_string(),
            format,
            line_no: 0,
            dim: None,
            buf: String::new(),
        })
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    fn malformed(&self, detail: impl std::fmt::Display) -> CliError {
        CliError::input(format!(
            "{}: malformed row at line {}: {detail}",
            self.path, self.line_no
        ))
    }

    fn parse_csv_row(&self, line: &str) -> CliResult<DVector<f64>> {
        let mut values = Vec::new();
        for field in line.split(',') {
            let field = field.trim();
            let v: f64 = field
                .parse()
                .map_err(|_| self.malformed(format!("'{field}' is not a number")))?;
            if !v.is_finite() {
                return Err(self.malformed("non-finite value"));
            }
            values.push(v);
        }
        Ok(DVector::from_vec(values))
    }

    fn parse_jsonl_row(&self, line: &str) -> CliResult<DVector<f64>> {
        let values: Vec<f64> = serde_json::from_str(line)
            .map_err(|e| self.malformed(format!("expected a JSON array of numbers: {e}")))?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(self.malformed("non-finite value"));
        }
        Ok(DVector::from_vec(values))
    }

    /// Next observation, or `None` at end of input.
    pub fn next_observation(&mut self) -> CliResult<Option<DVector<f64>>> {
        loop {
            self.buf.clear();
            let n = self
                .reader
                .read_line(&mut self.buf)
                .map_err(|e| CliError::io(format!("{}: read error: {e}", self.path)))?;
            if n == 0 {
                return Ok(None);
            }
            self.line_no += 1;
            let line = self.buf.trim();
            if line.is_empty() {
                continue;
            }
            // sniff JSONL content behind a CSV extension
            if self.line_no == 1 && self.format == InputFormat::Csv && line.starts_with('[') {
                self.format = InputFormat::Jsonl;
            }
            let parsed = match self.format {
                InputFormat::Csv => {
                    match self.parse_csv_row(line) {
                        Ok(row) => Ok(row),
                        // an unparseable first line is an optional header
                        Err(e) => {
                            if self.line_no == 1
                                && line.split(',').any(|f| f.trim().parse::<f64>().is_err())
                            {
                                continue;
                            }
                            Err(e)
                        }
                    }
                }
                InputFormat::Jsonl => self.parse_jsonl_row(line),
            }?;
            match self.dim {
                None => {
                    if parsed.len() < 2 {
                        return Err(self.malformed(format!(
                            "observations must have at least 2 coordinates, found {}",
                            parsed.len()
                        )));
                    }
                    self.dim = Some(parsed.len());
                }
                Some(d) if parsed.len() != d => {
                    return Err(self.malformed(format!(
                        "dimension mismatch: expected {d} columns, found {}",
                        parsed.len()
                    )));
                }
                _ => {}
            }
            return Ok(Some(parsed));
        }
    }

    /// Drains any unread input and returns the SHA-256 of the whole file.
    pub fn finish(mut self) -> CliResult<String> {
        let mut sink = [0u8; 8192];
        loop {
            let n = self
                .reader
                .read(&mut sink)
                .map_err(|e| CliError::io(format!("{}: read error: {e}", self.path)))?;
            if n == 0 {
                break;
            }
        }
        let digest = self.reader.into_inner().hasher.finalize();
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}

/// Parses a comma-separated vector flag like "1,0,0".
pub fn parse_vector_flag(raw: &str, what: &str) -> CliResult<Vec<f64>> {
    let mut values = Vec::new();
    for field in raw.split(',') {
        let v: f64 = field
            .trim()
            .parse()
            .map_err(|_| CliError::input(format!("{what}: '{field}' is not a number")))?;
        if !v.is_finite() {
            return Err(CliError::input(format!("{what}: non-finite value")));
        }
        values.push(v);
    }
    Ok(values)
}

// ---------------------------------------------------------------------------
// manifest
// ---------------------------------------------------------------------------

/// Provenance record written next to every result file.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub version: &'static str,
    pub started_at_unix: f64,
    pub finished_at_unix: f64,
    pub input_checksums: BTreeMap<String, String>,
}

fn unix_now() -> f64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    let mut f = File::create(path)
        .map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))?;
    f.write_all(contents.as_bytes())
        .map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))
}

fn ensure_out_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::io(format!("cannot create output dir {}: {e}", dir.display())))
}

fn write_manifest(dir: &Path, manifest: &RunManifest) -> CliResult<()> {
    let json = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    write_file(&dir.join("manifest.json"), &(json + "\n"))
}

// ---------------------------------------------------------------------------
// estimate
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct EstimateArgs {
    pub input: PathBuf,
    pub algorithm: Algorithm,
    pub hyperparams: HyperParams,
    /// Directions x₀ for confidence intervals.
    pub directions: Vec<Vec<f64>>,
    pub test_point: Option<Vec<f64>>,
    /// Confidence level; the test runs at significance 1 − level.
    pub level: f64,
    pub seed: u64,
    pub checkpoint_every: Option<usize>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
pub struct CiOutput {
    pub direction: Vec<f64>,
    pub center: f64,
    pub half_width: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
}

#[derive(Debug, Serialize)]
pub struct TestOutput {
    pub point: Vec<f64>,
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    pub reject: bool,
    pub level: f64,
}

/// Result payload of `estimate`; field names are frozen (golden-file tested).
#[derive(Debug, Serialize)]
pub struct EstimateOutput {
    pub algorithm: String,
    pub n: usize,
    pub skipped: usize,
    pub median: Vec<f64>,
    pub confidence_intervals: Vec<CiOutput>,
    pub test: Option<TestOutput>,
}

/// One pass over the input file: the chosen estimator plus the covariance,
/// plug-in Hessian and unregularized curvature accumulators, all driven at
/// the pre-step estimate. m₀ is the first observation.
pub fn cmd_estimate(args: &EstimateArgs) -> CliResult<EstimateOutput> {
    if !(0.0 < args.level && args.level < 1.0) {
        return Err(CliError::input("level must lie in (0, 1)"));
    }
    if args.checkpoint_every == Some(0) {
        return Err(CliError::input("checkpoint-every must be >= 1"));
    }
    if args.checkpoint_every.is_some() && args.out.is_none() {
        return Err(CliError::input("checkpoint-every requires --out"));
    }
    let started = unix_now();
    let mut reader = ObservationReader::open(&args.input)?;
    let first = reader
        .next_observation()?
        .ok_or_else(|| CliError::input(format!("{}: no observations", args.input.display())))?;
    let p = first.len();

    let mut est = MedianEstimator::new(args.algorithm, first.clone(), &args.hyperparams)?;
    let mut cov = CovarianceAccumulator::identity(p);
    let mut plug = PlugInHessianAccumulator::identity(p);
    let mut sbar = HessianAccumulator::identity(p, BetaSchedule::None);
    let mut z_est = ChaCha8Rng::seed_from_u64(derive_seed(args.seed, &[101]));
    let mut z_sbar = ChaCha8Rng::seed_from_u64(derive_seed(args.seed, &[102]));

    let directions: Vec<DVector<f64>> = args
        .directions
        .iter()
        .map(|d| {
            if d.len() != p {
                Err(CliError::input(format!(
                    "direction has {} coordinates, data has {p}",
                    d.len()
                )))
            } else {
                Ok(DVector::from_vec(d.clone()))
            }
        })
        .collect::<CliResult<_>>()?;
    let test_point: Option<DVector<f64>> = match &args.test_point {
        Some(t) if t.len() != p => {
            return Err(CliError::input(format!(
                "test-point has {} coordinates, data has {p}",
                t.len()
            )))
        }
        Some(t) => Some(DVector::from_vec(t.clone())),
        None => None,
    };

    let mut trace: Vec<(usize, usize, f64)> = Vec::new();
    let mut absorb = |x: &DVector<f64>,
                      est: &mut MedianEstimator,
                      cov: &mut CovarianceAccumulator,
                      plug: &mut PlugInHessianAccumulator,
                      sbar: &mut HessianAccumulator,
                      trace: &mut Vec<(usize, usize, f64)>| {
        cov.update(x, est.estimate());
        plug.update(x, est.estimate());
        let zs = DVector::from_fn(p, |_, _| z_sbar.sample(StandardNormal));
        sbar.update(x, est.estimate(), &zs);
        let ze = DVector::from_fn(p, |_, _| z_est.sample(StandardNormal));
        est.step(x, &ze);
        if let Some(every) = args.checkpoint_every {
            if est.n() % every == 0 {
                for (i, v) in est.estimate().iter().enumerate() {
                    trace.push((est.n(), i, *v));
                }
            }
        }
    };

    absorb(&first, &mut est, &mut cov, &mut plug, &mut sbar, &mut trace);
    while let Some(x) = reader.next_observation()? {
        absorb(&x, &mut est, &mut cov, &mut plug, &mut sbar, &mut trace);
    }
    let checksum = reader.finish()?;
    let n = est.n();

    let mut cis = Vec::new();
    for x0 in &directions {
        let ci = confidence_interval(
            est.estimate(),
            &sbar.h_tilde_inverse(),
            &cov.sigma_bar(),
            x0,
            args.level,
            n,
        )?;
        cis.push(CiOutput {
            direction: x0.iter().copied().collect(),
            center: ci.center,
            half_width: ci.half_width,
            lower: ci.lower(),
            upper: ci.upper(),
            level: ci.level,
        });
    }
    let test = match &test_point {
        Some(point) => {
            let res = chi_square_test(
                est.estimate(),
                &plug.h_star(),
                &cov.sigma_bar_inv(),
                point,
                n,
                1.0 - args.level,
            )?;
            Some(TestOutput {
                point: point.iter().copied().collect(),
                statistic: res.statistic,
                dof: res.dof,
                p_value: res.p_value,
                reject: res.reject,
                level: res.level,
            })
        }
        None => None,
    };

    let output = EstimateOutput {
        algorithm: args.algorithm.name().to_string(),
        n,
        skipped: est.skipped(),
        median: est.estimate().iter().copied().collect(),
        confidence_intervals: cis,
        test,
    };

    if let Some(dir) = &args.out {
        ensure_out_dir(dir)?;
        let json = serde_json::to_string_pretty(&output).expect("output serializes") + "\n";
        write_file(&dir.join("estimate.json"), &json)?;
        if args.checkpoint_every.is_some() {
            let mut csv = String::from("n,coordinate,value\n");
            for (n, i, v) in &trace {
                csv.push_str(&format!("{n},{i},{v}\n"));
            }
            write_file(&dir.join("trace.csv"), &csv)?;
        }
        let mut checksums = BTreeMap::new();
        checksums.insert(args.input.display().to_string(), checksum);
        write_manifest(
            dir,
            &RunManifest {
                command: "estimate".into(),
                config: serde_json::to_value(args).expect("args serialize"),
                seed: Some(args.seed),
                version: env!("CARGO_PKG_VERSION"),
                started_at_unix: started,
                finished_at_unix: unix_now(),
                input_checksums: checksums,
            },
        )?;
    }
    Ok(output)
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimulateMode {
    Mse,
    Levels,
}

impl std::str::FromStr for SimulateMode {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mse" => Ok(SimulateMode::Mse),
            "levels" => Ok(SimulateMode::Levels),
            other => Err(CliError::input(format!(
                "unknown mode '{other}' (expected 'mse' or 'levels')"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimulateArgs {
    pub mode: SimulateMode,
    pub config: PathBuf,
    pub out: PathBuf,
    /// Significance level for `levels` mode.
    pub alpha: f64,
}

/// Long-format results CSV: `algorithm,n,statistic,value,std_error`.
fn mse_csv(res: &MseResult) -> String {
    let mut csv = String::from("algorithm,n,statistic,value,std_error\n");
    for pt in &res.points {
        csv.push_str(&format!(
            "{},{},mse,{},{}\n",
            pt.algorithm, pt.n, pt.mse, pt.std_error
        ));
    }
    csv
}

fn levels_csv(res: &LevelResult) -> String {
    let mut csv = String::from("algorithm,n,statistic,value,std_error\n");
    for row in &res.rows {
        csv.push_str(&format!(
            "{},{},rejection_rate,{},{}\n",
            row.algorithm, row.n, row.rejection_rate, row.std_error
        ));
    }
    csv
}

fn mse_summary(res: &MseResult) -> String {
    let cfg = &res.config;
    let mut s = format!(
        "MSE experiment: p={}, n={}, replications={}, init_radius={}, seed={}\n",
        cfg.p, cfg.n, cfg.replications, cfg.init_radius, cfg.seed
    );
    for &algo in &cfg.algorithms {
        if let Some(mse) = res.final_mse(algo) {
            let se = res
                .points
                .iter()
                .filter(|pt| pt.algorithm == algo)
                .max_by_key(|pt| pt.n)
                .map(|pt| pt.std_error)
                .unwrap_or(0.0);
            s.push_str(&format!("  {algo:<5} final MSE {mse:.6e} (se {se:.2e})\n"));
        }
    }
    s
}

fn levels_summary(res: &LevelResult) -> String {
    let cfg = &res.config;
    let mut s = format!(
        "Empirical levels at alpha={}: p={}, n={}, replications={}, init_radius={}, seed={}\n",
        res.alpha, cfg.p, cfg.n, cfg.replications, cfg.init_radius, cfg.seed
    );
    for row in &res.rows {
        s.push_str(&format!(
            "  {:<5} rejection rate {:.1}% (se {:.2}%)\n",
            row.algorithm,
            100.0 * row.rejection_rate,
            100.0 * row.std_error
        ));
    }
    s
}

/// Runs a configured experiment and writes `results.csv`, `summary.txt` and
/// `manifest.json` into the output directory.
pub fn cmd_simulate(args: &SimulateArgs) -> CliResult<()> {
    let started = unix_now();
    let raw = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::io(format!("cannot read {}: {e}", args.config.display())))?;
    let cfg: ExperimentConfig = toml::from_str(&raw)
        .map_err(|e| CliError::input(format!("{}: {e}", args.config.display())))?;
    cfg.validate()?;

    ensure_out_dir(&args.out)?;
    let (csv, summary) = match args.mode {
        SimulateMode::Mse => {
            let res = run_mse_experiment(&cfg)?;
            (mse_csv(&res), mse_summary(&res))
        }
        SimulateMode::Levels => {
            if !(0.0 < args.alpha && args.alpha < 1.0) {
                return Err(CliError::input("alpha must lie in (0, 1)"));
            }
            let res = run_level_experiment(&cfg, args.alpha)?;
            (levels_csv(&res), levels_summary(&res))
        }
    };
    write_file(&args.out.join("results.csv"), &csv)?;
    write_file(&args.out.join("summary.txt"), &summary)?;

    let digest = Sha256::digest(raw.as_bytes());
    let mut checksums = BTreeMap::new();
    checksums.insert(
        args.config.display().to_string(),
        digest.iter().map(|b| format!("{b:02x}")).collect(),
    );
    write_manifest(
        &args.out,
        &RunManifest {
            command: format!(
                "simulate --mode {}",
                if args.mode == SimulateMode::Mse {
                    "mse"
                } else {
                    "levels"
                }
            ),
            config: serde_json::to_value(&cfg).expect("config serializes"),
            seed: Some(cfg.seed),
            version: env!("CARGO_PKG_VERSION"),
            started_at_unix: started,
            finished_at_unix: unix_now(),
            input_checksums: checksums,
        },
    )?;
    print!("{summary}");
    Ok(())
}

// ---------------------------------------------------------------------------
// weiszfeld
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct WeiszfeldArgs {
    pub input: PathBuf,
    pub tol: f64,
    pub max_iter: usize,
    pub out: Option<PathBuf>,
}

/// Payload of `weiszfeld`; on non-convergence it carries the last iterate and
/// `converged: false`, and the command exits with code 4.
#[derive(Debug, Serialize)]
pub struct WeiszfeldOutput {
    pub median: Vec<f64>,
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
}

/// Pools the input file and runs the offline solver. Returns the payload and
/// the exit code (0, or 4 when the tolerance was not reached).
pub fn cmd_weiszfeld(args: &WeiszfeldArgs) -> CliResult<(WeiszfeldOutput, i32)> {
    let started = unix_now();
    let mut reader = ObservationReader::open(&args.input)?;
    let mut samples = Vec::new();
    while let Some(x) = reader.next_observation()? {
        samples.push(x);
    }
    let checksum = reader.finish()?;

    let (output, code) = match weiszfeld(&samples, args.tol, args.max_iter) {
        Ok(res) => (
            WeiszfeldOutput {
                median: res.median.iter().copied().collect(),
                iterations: res.iterations,
                grad_norm: res.grad_norm,
                converged: true,
            },
            EXIT_OK,
        ),
        Err(Error::NonConvergence {
            last,
            iterations,
            grad_norm,
        }) => (
            WeiszfeldOutput {
                median: last.iter().copied().collect(),
                iterations,
                grad_norm,
                converged: false,
            },
            EXIT_NONCONVERGENCE,
        ),
        Err(e) => return Err(e.into()),
    };

    if let Some(dir) = &args.out {
        ensure_out_dir(dir)?;
        let json = serde_json::to_string_pretty(&output).expect("output serializes") + "\n";
        write_file(&dir.join("weiszfeld.json"), &json)?;
        let mut checksums = BTreeMap::new();
        checksums.insert(args.input.display().to_string(), checksum);
        write_manifest(
            dir,
            &RunManifest {
                command: "weiszfeld".into(),
                config: serde_json::json!({
                    "input": args.input.display().to_string(),
                    "tol": args.tol,
                    "max_iter": args.max_iter,
                }),
                seed: None,
                version: env!("CARGO_PKG_VERSION"),
                started_at_unix: started,
                finished_at_unix: unix_now(),
                input_checksums: checksums,
            },
        )?;
    }
    Ok((output, code))
}
