//! Command-line driver: simulate data, fit the tempered sampler, predict
//! graphs at new covariate points, export DOT files, and score against
//! stored ground truth.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bnp_dcgx::cli_io::{self, CliError, RunConfig};

#[derive(Parser)]
#[command(
    name = "bnp-dcgx",
    version,
    about = "Covariate-dependent cyclic graph inference for expression data"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

/// Flags shared by every subcommand. Command-line values override the
/// config file, which overrides built-in defaults.
#[derive(Args, Clone)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Random seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Expression CSV override.
    #[arg(long)]
    expr: Option<PathBuf>,
    /// Coordinates CSV override.
    #[arg(long)]
    coords: Option<PathBuf>,
}

impl Common {
    fn apply(&self, config: &mut RunConfig) {
        if let Some(seed) = self.seed {
            config.hyperparams.seed = seed;
        }
        if let Some(dir) = &self.out_dir {
            config.out_dir = dir.clone();
        }
        if let Some(expr) = &self.expr {
            config.expr_csv = expr.clone();
        }
        if let Some(coords) = &self.coords {
            config.coords_csv = coords.clone();
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset plus ground truth (expr.csv, coords.csv,
    /// truth.json).
    Simulate {
        #[command(flatten)]
        common: Common,
        /// 1 = clustered graphs, 2 = smoothly varying coefficients.
        #[arg(long)]
        scenario: Option<u8>,
        /// Scenario 1: units per cluster.
        #[arg(long)]
        n_per_cluster: Option<usize>,
        /// Scenario 2: total units.
        #[arg(long)]
        n_units: Option<usize>,
    },
    /// Run the tempered sampler; writes trace.jsonl and meta.json.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Worker thread cap.
        #[arg(long)]
        threads: Option<usize>,
        /// Score the observed-data likelihood with the signed Jacobian
        /// determinant, rejecting non-positive proposals.
        #[arg(long)]
        signed_det: bool,
        /// Scale reassignment residuals by the per-gene noise, the
        /// standard conjugate spread (comparison mode).
        #[arg(long)]
        scaled_predictive: bool,
        /// Add the collapsed coordinate likelihood to swap decisions.
        #[arg(long)]
        include_x_in_swap: bool,
        /// Suppress progress reporting.
        #[arg(long)]
        quiet: bool,
    },
    /// Predict the graph at new covariate points; writes predictions.json.
    Predict {
        #[command(flatten)]
        common: Common,
        /// Trace file from fit.
        #[arg(long, default_value = "trace.jsonl")]
        trace: PathBuf,
        /// Output file.
        #[arg(long, default_value = "predictions.json")]
        out: PathBuf,
        /// Grid spec such as "x1=0:1:0.1@x2=0.5" (repeatable).
        #[arg(long)]
        grid: Vec<String>,
        /// Explicit point such as "0.3,0.7" (repeatable).
        #[arg(long)]
        point: Vec<String>,
    },
    /// Write DOT graphs from predictions and/or a fitted trace.
    ExportGraph {
        #[command(flatten)]
        common: Common,
        /// predictions.json from predict: one DOT per location.
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// trace.jsonl from fit: per-unit DOTs plus union.dot.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Edge decision threshold override.
        #[arg(long)]
        threshold: Option<f64>,
        /// Units to export (comma-separated indices; default all).
        #[arg(long)]
        units: Option<String>,
    },
    /// Score a trace against stored truth; writes metrics.json.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "trace.jsonl")]
        trace: PathBuf,
        #[arg(long, default_value = "truth.json")]
        truth: PathBuf,
        #[arg(long, default_value = "metrics.json")]
        out: PathBuf,
        /// Edge decision threshold override.
        #[arg(long)]
        threshold: Option<f64>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Simulate {
            common,
            scenario,
            n_per_cluster,
            n_units,
        } => {
            let mut config = cli_io::load_config(common.config.as_deref())?;
            common.apply(&mut config);
            if let Some(s) = scenario {
                config.scenario = s;
            }
            if let Some(npc) = n_per_cluster {
                config.n_per_cluster = npc;
            }
            if let Some(nu) = n_units {
                config.n_units = nu;
            }
            cli_io::cmd_simulate(&config)
        }
        Cmd::Fit {
            common,
            threads,
            signed_det,
            scaled_predictive,
            include_x_in_swap,
            quiet,
        } => {
            let mut config = cli_io::load_config(common.config.as_deref())?;
            common.apply(&mut config);
            if signed_det {
                config.hyperparams.signed_det = true;
            }
            if scaled_predictive {
                config.hyperparams.scaled_predictive = true;
            }
            if include_x_in_swap {
                config.hyperparams.include_x_in_swap = true;
            }
            let threads = cli_io::resolve_threads(threads, &config)?;
            let n_iter = config.hyperparams.n_iter;
            let every = (n_iter / 10).max(1);
            cli_io::cmd_fit(&config, threads, move |iter| {
                if !quiet && (iter % every == 0 || iter == n_iter) {
                    eprintln!("sweep {iter}/{n_iter}");
                }
            })
        }
        Cmd::Predict {
            common,
            trace,
            out,
            grid,
            point,
        } => {
            let mut config = cli_io::load_config(common.config.as_deref())?;
            common.apply(&mut config);
            for p in &point {
                config.predict_points.push(cli_io::parse_point(p)?);
            }
            config.predict_grids.extend(grid);
            cli_io::cmd_predict(&config, &trace, &out)
        }
        Cmd::ExportGraph {
            common,
            predictions,
            trace,
            threshold,
            units,
        } => {
            let mut config = cli_io::load_config(common.config.as_deref())?;
            common.apply(&mut config);
            if let Some(t) = threshold {
                config.threshold = t;
            }
            let unit_list = match units {
                None => None,
                Some(text) => {
                    let parsed: Result<Vec<usize>, _> = text
                        .split(',')
                        .map(|s| s.trim().parse::<usize>())
                        .collect();
                    Some(parsed.map_err(|_| {
                        CliError::Config(format!("bad unit list {text:?}"))
                    })?)
                }
            };
            cli_io::cmd_export_graph(
                &config,
                predictions.as_deref(),
                trace.as_deref(),
                unit_list.as_deref(),
            )
        }
        Cmd::Evaluate {
            common,
            trace,
            truth,
            out,
            threshold,
        } => {
            let mut config = cli_io::load_config(common.config.as_deref())?;
            common.apply(&mut config);
            if let Some(t) = threshold {
                config.threshold = t;
            }
            cli_io::cmd_evaluate(&config, &trace, &truth, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
