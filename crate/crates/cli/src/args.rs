use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "firewater", version, about = "Fire-and-water counter-terror optimal control experiments")]
pub struct Cli {
    /// Parameter file of `key = value` lines; the built-in base set if omitted.
    #[arg(long, global = true, value_name = "FILE")]
    pub params: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimal path from an initial stock.
    Solve(SolveArgs),
    /// Steady states of the high and/or low branch.
    Steady(SteadyArgs),
    /// High-branch steady states over a (γ, β) grid.
    Sweep(SweepArgs),
    /// Quadratic surface x_s(γ, β) fitted to a sweep CSV.
    Fit(FitArgs),
    /// (γ, β) pairs on a level curve of the fitted surface, re-solved.
    Contour(ContourArgs),
    /// Initial stock where the low and high branches cost the same.
    Dns(DnsArgs),
    /// Convexity of the derived Hamiltonian along an optimal path.
    Arrow(ArrowArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TerminalArg {
    /// λ(T) = 0.
    Zero,
    /// λ(T) equal to the discounted high steady-state costate.
    Steady,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SolveBranch {
    /// High branch above the switching point; below it the cheaper branch.
    Auto,
    High,
    Low,
}

#[derive(Debug, Clone, Args)]
pub struct PathArgs {
    /// Initial stock x(0).
    #[arg(long, default_value_t = 0.95, allow_negative_numbers = true)]
    pub x0: f64,
    #[arg(long, default_value_t = 100.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = 250)]
    pub steps: usize,
    #[arg(long, value_enum, default_value_t = TerminalArg::Zero)]
    pub terminal: TerminalArg,
    /// Shooting tolerance on λ(T); defaults to 1e-5, or 1e-7 with `--terminal steady`.
    #[arg(long)]
    pub shoot_tol: Option<f64>,
    #[arg(long, default_value_t = 20)]
    pub max_cycles: usize,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub path: PathArgs,
    #[arg(long, value_enum, default_value_t = SolveBranch::Auto)]
    pub branch: SolveBranch,
    /// Trajectory CSV; standard output if omitted.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// JSON run summary.
    #[arg(long, value_name = "FILE")]
    pub summary: Option<PathBuf>,
    /// Add wall-clock runtime to the summary (breaks byte-identical reruns).
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SteadyBranch {
    High,
    Low,
    All,
}

#[derive(Debug, Args)]
pub struct SteadyArgs {
    #[arg(long, value_enum, default_value_t = SteadyBranch::High)]
    pub branch: SteadyBranch,
    /// CSV output; standard output if omitted (a table is printed instead when set).
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    #[arg(long, default_value_t = 0.1)]
    pub gamma_min: f64,
    #[arg(long, default_value_t = 0.2)]
    pub gamma_max: f64,
    #[arg(long, default_value_t = 0.01)]
    pub gamma_step: f64,
    #[arg(long, default_value_t = 0.01)]
    pub beta_min: f64,
    #[arg(long, default_value_t = 0.02)]
    pub beta_max: f64,
    #[arg(long, default_value_t = 0.001)]
    pub beta_step: f64,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub grid: GridArgs,
    /// Worker threads; all processors if omitted.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Sweep CSV to fit.
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    /// Fit JSON; standard output if omitted.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ContourArgs {
    /// Level of x_s to hold.
    #[arg(long, default_value_t = 0.4)]
    pub target: f64,
    /// Fit JSON from `fit`; the default sweep is run and fitted if omitted.
    #[arg(long, value_name = "FILE")]
    pub fit: Option<PathBuf>,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DnsArgs {
    #[arg(long, default_value_t = 0.011)]
    pub lo: f64,
    #[arg(long, default_value_t = 0.016)]
    pub hi: f64,
    /// Bisection tolerance on x0.
    #[arg(long, default_value_t = 1e-6)]
    pub x_tol: f64,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ArrowArgs {
    #[command(flatten)]
    pub path: PathArgs,
    /// Tolerance of the side condition λ(T)x(T) ≥ -tol.
    #[arg(long, default_value_t = 1e-6)]
    pub side_tol: f64,
    /// `t,H0_xx` CSV.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Verdict JSON; standard output if omitted.
    #[arg(long, value_name = "FILE")]
    pub summary: Option<PathBuf>,
}
