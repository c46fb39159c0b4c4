mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use cyberlqr_core::{Error, UnstablePolicy};

/// Attack/defense resource allocation for networked LQR control.
#[derive(Parser)]
#[command(name = "cyberlqr", version)]
struct Cli {
    /// TOML file with [table], [optimizer] and [solver] sections; flags win over it
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads for pattern solves and sweep points (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute (or load from cache) the loss of every attack pattern
    BuildTable(BuildTableArgs),
    /// Solve the attack/defense game at one cost pair
    Solve(SolveArgs),
    /// Solve the game over a grid of cost pairs
    Sweep(SweepArgs),
    /// Cross-check the solver against exhaustive enumeration
    OracleCheck(OracleArgs),
    /// Write a synthetic network system file
    Synth(SynthArgs),
}

#[derive(Args)]
pub struct BuildTableArgs {
    /// System JSON file
    #[arg(long)]
    pub system: PathBuf,
    /// Table file; reused when it matches the system and settings
    #[arg(long)]
    pub out: PathBuf,
    /// Keep each node's own feedback under attack
    #[arg(long)]
    pub self_links_intact: bool,
    /// cap, cap:<value>, cap-factor:<factor> or error
    #[arg(long)]
    pub unstable_policy: Option<UnstablePolicy>,
    #[arg(long)]
    pub grad_tol: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Largest node count accepted (2^n patterns are solved)
    #[arg(long)]
    pub max_nodes: Option<usize>,
}

#[derive(Args, Clone)]
pub struct SolverFlags {
    /// Number of solver starting points
    #[arg(long)]
    pub restarts: Option<usize>,
    /// Accepted best-response gap, relative to the payoff scale
    #[arg(long)]
    pub eps_tol: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct SolveArgs {
    /// Loss table file
    #[arg(long)]
    pub table: PathBuf,
    /// Attack cost per node
    #[arg(long, allow_negative_numbers = true)]
    pub gamma_a: f64,
    /// Defense cost per node
    #[arg(long, allow_negative_numbers = true)]
    pub gamma_d: f64,
    #[command(flatten)]
    pub solver: SolverFlags,
    /// Write the JSON here instead of stdout
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Args)]
#[command(group(ArgGroup::new("ga").required(true).args(["gamma_a", "gamma_a_grid"])))]
#[command(group(ArgGroup::new("gd").required(true).args(["gamma_d", "gamma_d_grid"])))]
pub struct SweepArgs {
    #[arg(long)]
    pub table: PathBuf,
    #[arg(long)]
    pub gamma_a: Option<f64>,
    /// Comma list or lo:hi:count
    #[arg(long)]
    pub gamma_a_grid: Option<String>,
    #[arg(long)]
    pub gamma_d: Option<f64>,
    /// Comma list or lo:hi:count
    #[arg(long)]
    pub gamma_d_grid: Option<String>,
    #[command(flatten)]
    pub solver: SolverFlags,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
    /// Write here instead of stdout
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct OracleArgs {
    #[arg(long)]
    pub table: PathBuf,
    /// Comma list or lo:hi:count (default: 5 points over [0, max loss])
    #[arg(long)]
    pub gamma_a_grid: Option<String>,
    #[arg(long)]
    pub gamma_d_grid: Option<String>,
    #[command(flatten)]
    pub solver: SolverFlags,
}

#[derive(Args)]
#[command(group(ArgGroup::new("source").required(true).args(["graph", "ring"])))]
pub struct SynthArgs {
    /// Graph spec JSON file
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Ring of this many nodes
    #[arg(long)]
    pub ring: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub damping: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write here instead of stdout
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Exit status for a failed run.
fn exit_code(err: &anyhow::Error) -> u8 {
    let Some(e) = err.chain().find_map(|c| c.downcast_ref::<Error>()) else {
        return 1;
    };
    match e {
        Error::Dimension(_) | Error::Validation { .. } | Error::Parse(_) | Error::Json(_) | Error::Disconnected { .. } => 3,
        Error::NonConvergence { .. } => 4,
        Error::Capacity { .. } => 5,
        Error::Unstable { .. } | Error::NotStabilizable(_) | Error::PatternNotStabilizable { .. } => 6,
        Error::Numerical(_) | Error::Io(_) => 1,
    }
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    let file = config::FileConfig::load(cli.config.as_deref())?;
    if let Some(n) = cli.threads.or(file.threads) {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::BuildTable(args) => commands::build_table(&args, &file),
        Command::Solve(args) => commands::solve(&args, &file),
        Command::Sweep(args) => commands::sweep(&args, &file),
        Command::OracleCheck(args) => commands::oracle_check(&args, &file),
        Command::Synth(args) => commands::synth(&args),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
