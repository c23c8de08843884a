//! `shsmb`: bounds, sweeps, simulation and SDPA export for stochastic
//! hybrid system models.

mod commands;
mod model;
mod table;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Exit status for each failure class.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Model(String),
    Solver(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Model(_) => 3,
            Failure::Solver(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Model(m) | Failure::Solver(m) => m,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "shsmb", version, about = "Semidefinite bounds on stationary moments of stochastic hybrid systems")]
pub struct Cli {
    /// Worker threads for orders, min/max solves and paths.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Lower and upper bounds on one moment across relaxation orders.
    Bounds(BoundsArgs),
    /// Bounds on a moment or on CV² while one parameter varies.
    Sweep(SweepArgs),
    /// Monte Carlo estimates of stationary moments.
    Simulate(SimulateArgs),
    /// Write the SDP of one order and sense in SDPA sparse format.
    Export(ExportArgs),
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    /// Model file, or the name of a bundled model (tcp_onoff, ou, ...).
    pub model: String,
    /// Override a parameter, e.g. `--set p=0.1`.
    #[arg(long = "set", value_name = "NAME=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Args, Debug, Clone)]
pub struct RelaxArgs {
    /// Also localize on pairwise products of constraints.
    #[arg(long)]
    pub products: bool,
    /// Solve in raw moment units instead of rescaling by the model's scale hints.
    #[arg(long)]
    pub no_scaling: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SolverChoice {
    Builtin,
    SdpaExport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SenseArg {
    Min,
    Max,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EqualitiesArg {
    Paired,
    Eliminated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SchemeArg {
    Em,
    Milstein,
}

#[derive(Args, Debug)]
pub struct BoundsArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Monomial to bound, e.g. `b_ss`, `v^2`, `b_ca*v`.
    #[arg(long)]
    pub moment: String,
    /// Orders as `a..b` (inclusive) or a comma list.
    #[arg(long, default_value = "2..4")]
    pub orders: String,
    #[arg(long, value_enum, default_value = "both")]
    pub sense: SenseArg,
    #[arg(long, value_enum, default_value = "builtin")]
    pub solver: SolverChoice,
    /// Directory for `.dat-s` files with `--solver sdpa-export`.
    #[arg(long, default_value = ".")]
    pub export_dir: PathBuf,
    /// Write the table as CSV to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print CSV instead of the text table.
    #[arg(long)]
    pub csv: bool,
    #[command(flatten)]
    pub relax: RelaxArgs,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Parameter from the model's [params] section.
    #[arg(long)]
    pub param: String,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<f64>,
    /// A monomial, or `cv2(<var>)` for the squared coefficient of variation.
    #[arg(long)]
    pub metric: String,
    #[arg(long, default_value_t = 4)]
    pub order: u32,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub csv: bool,
    #[command(flatten)]
    pub relax: RelaxArgs,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 0.01)]
    pub dt: f64,
    #[arg(long, default_value_t = 1000.0)]
    pub t_end: f64,
    /// Discarded initial stretch; defaults to a tenth of `--t-end`.
    #[arg(long)]
    pub burn_in: Option<f64>,
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u64).range(1..))]
    pub paths: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Comma-separated monomials; defaults to every state and mode indicator.
    #[arg(long, value_delimiter = ',')]
    pub moments: Vec<String>,
    #[arg(long, default_value_t = 20)]
    pub batches: usize,
    #[arg(long, value_enum, default_value = "em")]
    pub scheme: SchemeArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub moment: String,
    #[arg(long)]
    pub order: u32,
    #[arg(long, value_enum, default_value = "min")]
    pub sense: SenseArg,
    #[arg(long, value_enum, default_value = "paired")]
    pub equalities: EqualitiesArg,
    #[arg(long)]
    pub out: PathBuf,
    /// Write the assembled problem as is, without turning rows forced to
    /// zero by a vanishing diagonal into equalities.
    #[arg(long)]
    pub no_reduction: bool,
    #[command(flatten)]
    pub relax: RelaxArgs,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Some(j) = cli.jobs {
        if j == 0 {
            eprintln!("error: --jobs must be positive");
            return ExitCode::from(2);
        }
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j).build_global();
    }
    let result = match &cli.command {
        Command::Bounds(a) => commands::bounds(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Export(a) => commands::export(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
