use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use geomedian::cli::{
    self, cmd_estimate, cmd_simulate, cmd_weiszfeld, parse_vector_flag, CliError, EstimateArgs,
    SimulateArgs, SimulateMode, WeiszfeldArgs,
};
use geomedian::estimators::{Algorithm, HyperParams};

/// Streaming geometric-median estimation and inference.
#[derive(Parser)]
#[command(name = "geomedian", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Commands,
}

#[derive(Subcommand)]
enum Commands {
    /// One pass over a CSV/JSONL file with an online estimator, with optional
    /// confidence intervals and a location test.
    Estimate {
        /// Input file: CSV (header optional, p numeric columns) or JSONL
        /// (one array of p numbers per line).
        #[arg(long)]
        input: PathBuf,
        /// One of: asgd, sn, asn, wasn.
        #[arg(long)]
        algorithm: String,
        /// Step exponent (asgd/wasn/asn).
        #[arg(long)]
        gamma: Option<f64>,
        /// Step constant (asgd/wasn/asn).
        #[arg(long = "c-gamma")]
        c_gamma: Option<f64>,
        /// Step shift (wasn/asn).
        #[arg(long = "c-gamma-prime")]
        c_gamma_prime: Option<f64>,
        /// Averaging weight exponent (wasn only).
        #[arg(long)]
        omega: Option<f64>,
        /// Regularizer exponent (sn/wasn/asn).
        #[arg(long)]
        beta: Option<f64>,
        /// Regularizer constant (sn/wasn/asn).
        #[arg(long = "c-beta")]
        c_beta: Option<f64>,
        /// Direction x0 for a confidence interval, p comma-separated reals
        /// (repeatable).
        #[arg(long)]
        direction: Vec<String>,
        /// Point for the chi-squared test, p comma-separated reals.
        #[arg(long = "test-point")]
        test_point: Option<String>,
        /// Confidence level; the test runs at significance 1 - level.
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        #[arg(long, default_value_t = cli::DEFAULT_SEED)]
        seed: u64,
        /// Append the estimate to the trace every K samples (requires --out).
        #[arg(long = "checkpoint-every")]
        checkpoint_every: Option<usize>,
        /// Output directory for estimate.json, trace.csv and manifest.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reproduce a Monte-Carlo experiment from a TOML config.
    Simulate {
        /// "mse" or "levels".
        #[arg(long)]
        mode: String,
        #[arg(long)]
        config: PathBuf,
        /// Output directory for results.csv, summary.txt and manifest.json.
        #[arg(long)]
        out: PathBuf,
        /// Significance level for levels mode.
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
    },
    /// Offline sample geometric median (iteratively reweighted fixed point).
    Weiszfeld {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long = "max-iter", default_value_t = 10_000)]
        max_iter: usize,
        /// Output directory for weiszfeld.json and manifest.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn apply_overrides(
    algorithm: Algorithm,
    gamma: Option<f64>,
    c_gamma: Option<f64>,
    c_gamma_prime: Option<f64>,
    omega: Option<f64>,
    beta: Option<f64>,
    c_beta: Option<f64>,
) -> HyperParams {
    let mut hp = HyperParams::default();
    match algorithm {
        Algorithm::Asgd => {
            if let Some(v) = gamma {
                hp.asgd.gamma = v;
            }
            if let Some(v) = c_gamma {
                hp.asgd.c_gamma = v;
            }
        }
        Algorithm::Sn => {
            if let Some(v) = beta {
                hp.sn.beta = v;
            }
            if let Some(v) = c_beta {
                hp.sn.c_beta = v;
            }
        }
        Algorithm::Asn | Algorithm::Wasn => {
            let params = if algorithm == Algorithm::Asn {
                &mut hp.asn
            } else {
                &mut hp.wasn
            };
            if let Some(v) = gamma {
                params.gamma = v;
            }
            if let Some(v) = c_gamma {
                params.c_gamma = v;
            }
            if let Some(v) = c_gamma_prime {
                params.c_gamma_prime = v;
            }
            if let Some(v) = omega {
                params.omega = v;
            }
            if let Some(v) = beta {
                params.beta = v;
            }
            if let Some(v) = c_beta {
                params.c_beta = v;
            }
        }
    }
    hp
}

fn run(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Commands::Estimate {
            input,
            algorithm,
            gamma,
            c_gamma,
            c_gamma_prime,
            omega,
            beta,
            c_beta,
            direction,
            test_point,
            level,
            seed,
            checkpoint_every,
            out,
        } => {
            let algorithm: Algorithm = algorithm
                .parse()
                .map_err(|e: geomedian::Error| CliError::input(e.to_string()))?;
            let hyperparams =
                apply_overrides(algorithm, gamma, c_gamma, c_gamma_prime, omega, beta, c_beta);
            let directions = direction
                .iter()
                .map(|d| parse_vector_flag(d, "direction"))
                .collect::<Result<Vec<_>, _>>()?;
            let test_point = test_point
                .as_deref()
                .map(|t| parse_vector_flag(t, "test-point"))
                .transpose()?;
            let args = EstimateArgs {
                input,
                algorithm,
                hyperparams,
                directions,
                test_point,
                level,
                seed,
                checkpoint_every,
                out,
            };
            let output = cmd_estimate(&args)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&output).expect("output serializes")
            );
            Ok(cli::EXIT_OK)
        }
        Commands::Simulate {
            mode,
            config,
            out,
            alpha,
        } => {
            let args = SimulateArgs {
                mode: mode.parse::<SimulateMode>()?,
                config,
                out,
                alpha,
            };
            cmd_simulate(&args)?;
            Ok(cli::EXIT_OK)
        }
        Commands::Weiszfeld {
            input,
            tol,
            max_iter,
            out,
        } => {
            let (output, code) = cmd_weiszfeld(&WeiszfeldArgs {
                input,
                tol,
                max_iter,
                out,
            })?;
            println!(
                "{}",
                serde_json::to_string_pretty(&output).expect("output serializes")
            );
            Ok(code)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code as u8)
        }
    }
}
