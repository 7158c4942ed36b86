use std::path::PathBuf;

use ccopf::ccopf::Mode;
use clap::{Args, Parser, Subcommand};

/// Chance-constrained OPF for droop-controlled islanded microgrids with
/// power flow routers.
///
/// Exit codes: 0 success, 1 I/O or usage error, 2 power flow diverged,
/// 3 optimization did not converge, 4 infeasible, 5 validation failed.
#[derive(Debug, Parser)]
#[command(name = "grid-ccopf", version, about, long_about)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Matpower case file [default: bundled 33-bus case]
    #[arg(long, global = true, value_name = "FILE")]
    pub case: Option<PathBuf>,

    /// Device sidecar JSON [default: bundled 33-bus sidecar]
    #[arg(long, global = true, value_name = "FILE")]
    pub sidecar: Option<PathBuf>,

    /// Directory for JSON and CSV outputs
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,

    /// Seed of the scenario generator
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,

    /// Worker threads for scenario evaluation [default: all cores]
    #[arg(long, global = true, env = "GRID_CCOPF_THREADS")]
    pub threads: Option<usize>,

    /// Omit timestamps and wall-clock times so outputs are byte-reproducible
    #[arg(long, global = true)]
    pub deterministic: bool,

    /// Override every violation probability (ε_P, ε_Q, ε_V, ε_ω)
    #[arg(long, global = true, value_name = "EPS")]
    pub epsilon: Option<f64>,

    /// Increase log verbosity (-v info, -vv debug, -vvv trace)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the droop power flow for given set points
    Pf(PfArgs),
    /// Solve one OPF formulation
    Solve(SolveArgs),
    /// Dump sensitivity matrices and uncertainty margins
    Sensitivity(SensitivityArgs),
    /// Replay a solution under sampled renewable scenarios
    Validate(ValidateArgs),
    /// Solve and validate all four formulations
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct PfArgs {
    /// Set points as JSON, either a `solve` output or a bare set-point object
    /// [default: nominal set points]
    #[arg(long, value_name = "FILE")]
    pub setpoints: Option<PathBuf>,

    /// Forecast errors as a JSON object mapping bus id to MW [default: none]
    #[arg(long, value_name = "FILE")]
    pub xi: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IterationArgs {
    /// Margin convergence tolerance (p.u.)
    #[arg(long, default_value_t = 1e-5)]
    pub delta: f64,

    /// Maximum outer iterations
    #[arg(long, default_value_t = 25)]
    pub max_iter: usize,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Formulation: opf, opf-pfr, ccopf or ccopf-pfr
    #[arg(long)]
    pub mode: Mode,

    #[command(flatten)]
    pub iteration: IterationArgs,
}

#[derive(Debug, Args)]
pub struct SensitivityArgs {
    /// `solve` output whose set points are analyzed [default: solve --mode opf]
    #[arg(long, value_name = "FILE")]
    pub solution: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct McArgs {
    /// Number of scenarios
    #[arg(long, default_value_t = 10_000)]
    pub scenarios: usize,

    /// Histogram bins per bus voltage
    #[arg(long, default_value_t = 60)]
    pub bins: usize,

    /// Allowed excess of an empirical violation probability over its ε
    #[arg(long, default_value_t = 0.005)]
    pub slack: f64,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// `solve` output to validate
    #[arg(long, value_name = "FILE")]
    pub solution: PathBuf,

    #[command(flatten)]
    pub mc: McArgs,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub iteration: IterationArgs,

    #[command(flatten)]
    pub mc: McArgs,
}
