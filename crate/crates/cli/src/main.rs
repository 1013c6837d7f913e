//! `tandem`: command-line front end for the tandem overflow toolkit.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tandem_core::Error;

/// Environment variable overriding the oracle's state budget.
pub const BUDGET_ENV: &str = "TANDEM_MEMORY_BUDGET";

#[derive(Parser, Debug)]
#[command(name = "tandem", version, about = "Overflow probabilities of stable tandem queueing networks")]
pub struct Cli {
    /// Worker threads for sampling (results do not depend on it).
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// Network parameters as JSON: {"lambda": "1/18", "mu": ["3/18", ...]}.
    #[arg(long, global = true, conflicts_with_all = ["lambda", "mu"])]
    pub params: Option<PathBuf>,
    /// Arrival probability (decimal or p/q); use with --mu.
    #[arg(long, global = true, requires = "mu")]
    pub lambda: Option<String>,
    /// Service probabilities, comma separated.
    #[arg(long, global = true, value_delimiter = ',', requires = "lambda")]
    pub mu: Option<Vec<String>>,
    /// Write the main output here instead of stdout.
    #[arg(long, short, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Float,
    Rational,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Mc,
    Is,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Closed-form approximation at y, or at T_n(x).
    Approx(ApproxArgs),
    /// Exact P_x(τ_n < τ_0) on A_n by Gauss-Seidel.
    Exact(ExactArgs),
    /// Monte Carlo or importance-sampling estimate.
    Simulate(SimulateArgs),
    /// CSV of g_n, the lower bound, the relative-error bound and optionally the oracle.
    Bounds(BoundsArgs),
    /// Executable checks of the constructions.
    Verify {
        #[command(subcommand)]
        what: VerifyCommand,
    },
    /// Relative error of the decay rates over a 2-d slice of A_n.
    ///
    /// CSV columns: x1..xd, in_rbar, oracle, approx, V_n = -log(oracle)/n,
    /// W_n = -log(approx)/n, rel_err = (V_n - W_n)/V_n,
    /// prob_rel_err = (approx - oracle)/oracle, bound = rho^(n(1-g(x/n)-eps)).
    Sweep(SweepArgs),
    /// One coupled run of X and X̄ with its trace.
    Couple(CoupleArgs),
}

#[derive(Args, Debug)]
pub struct ApproxArgs {
    #[arg(long)]
    pub n: Option<i64>,
    /// State of X, comma separated; needs --n.
    #[arg(long, conflicts_with = "y")]
    pub x: Option<String>,
    /// State of Y, comma separated.
    #[arg(long)]
    pub y: Option<String>,
    #[arg(long, value_enum, default_value_t = Mode::Float)]
    pub mode: Mode,
    /// Per-term CSV: d, subset, c, beta, alpha..., term.
    #[arg(long)]
    pub breakdown: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ExactArgs {
    #[arg(long)]
    pub n: usize,
    /// Report the value at this state.
    #[arg(long)]
    pub x: Option<String>,
    #[arg(long, default_value_t = 1e-12)]
    pub tol: f64,
    #[arg(long, default_value_t = 1.0)]
    pub omega: f64,
    #[arg(long, default_value_t = 100_000)]
    pub max_sweeps: usize,
    /// Grid as CSV (x1..xd,value).
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Grid as the little-endian binary table.
    #[arg(long)]
    pub binary: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value_t = Method::Is)]
    pub method: Method,
    #[arg(long)]
    pub n: i64,
    #[arg(long)]
    pub x: String,
    #[arg(long, default_value_t = 10_000)]
    pub samples: u64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 64)]
    pub horizon_mult: u64,
    /// Also solve the oracle and report the variance ratio against it.
    #[arg(long)]
    pub reference: bool,
}

#[derive(Args, Debug)]
pub struct BoundsArgs {
    #[arg(long)]
    pub n: i64,
    /// A single state; otherwise every state of A_n.
    #[arg(long)]
    pub x: Option<String>,
    /// ε in the relative-error bound ρ^{n(1-g-ε)}.
    #[arg(long, default_value_t = 0.0)]
    pub eps: f64,
    /// Add the oracle column.
    #[arg(long)]
    pub oracle: bool,
}

#[derive(Subcommand, Debug)]
pub enum VerifyCommand {
    /// The tandem harmonic systems for every d up to the network dimension.
    System {
        /// Dimension; selects default rates when no parameters are given.
        #[arg(long)]
        d: Option<usize>,
        #[arg(long, value_enum, default_value_t = Mode::Rational)]
        mode: Mode,
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
    },
    /// Boundary value and harmonic residual of the closed form.
    Formula {
        #[arg(long)]
        d: Option<usize>,
        /// Largest y(1) - Σ y(j) probed.
        #[arg(long, default_value_t = 30)]
        grid: i64,
        #[arg(long, value_enum, default_value_t = Mode::Float)]
        mode: Mode,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
    },
    /// Superharmonic functions, the upper bound, the lower bound and the stage supermartingale.
    Bounds {
        #[arg(long)]
        d: Option<usize>,
        #[arg(long, default_value_t = 10_000)]
        states: usize,
        /// Level of the exhaustive lower-bound check.
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long)]
        r: Option<f64>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Componentwise and hitting-time relations along coupled paths.
    Coupling {
        #[arg(long)]
        d: Option<usize>,
        #[arg(long, default_value_t = 10_000)]
        paths: u64,
        #[arg(long, default_value_t = 12)]
        n: i64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        horizon_mult: u64,
    },
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    pub n: i64,
    /// The two coordinates (1-based) that vary; the rest stay 0.
    #[arg(long, value_delimiter = ',', default_value = "1,2")]
    pub axes: Vec<usize>,
    #[arg(long, default_value_t = 0.0)]
    pub eps: f64,
    #[arg(long, default_value_t = 1e-12)]
    pub tol: f64,
}

#[derive(Args, Debug)]
pub struct CoupleArgs {
    #[arg(long)]
    pub n: i64,
    #[arg(long)]
    pub x: String,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 64)]
    pub horizon_mult: u64,
}

/// Failure of a command, carrying its exit code.
#[derive(Debug)]
pub enum Failure {
    Core(Error),
    Usage(String),
    /// A verification ran but some check did not hold.
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Core(Error::Budget { .. }) => 4,
            Failure::Core(e) if e.is_numeric() => 3,
            Failure::Core(_) | Failure::Usage(_) => 2,
            Failure::Check(_) => 3,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Core(e) => write!(f, "{e}"),
            Failure::Usage(m) | Failure::Check(m) => write!(f, "{m}"),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
