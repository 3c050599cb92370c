use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fracsaddle_cli::artifacts::OutDir;
use fracsaddle_cli::config::RunConfig;
use fracsaddle_cli::stages::{run, Outcome, Stage};
use fracsaddle_cli::CliError;

/// Saddle-shaped solutions of the fractional Allen–Cahn equation: solver and verification suite.
///
/// Exit status: 0 when every check holds, 2 when a verification check fails, 1 on any
/// operational error (bad configuration, missing input, refused overwrite, solver failure).
#[derive(Parser)]
#[command(name = "fracsaddle", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    global: Global,
}

#[derive(Subcommand)]
enum Command {
    /// Calibrate the Dirichlet-to-Neumann constant against the Poisson extension
    Calibrate,
    /// One-dimensional layer solution
    Layer,
    /// Saddle solution in the doubly radial variables
    Saddle,
    /// Sign, barrier, asymptotic, supersolution and uniqueness checks
    Verify,
    /// Minimal Rayleigh quotient and the cutoff energy scaling
    Stability,
    /// Half-ball ratios on the cone and narrow-set radii
    Geometry,
    /// All stages in order
    Pipeline,
}

#[derive(Args)]
struct Global {
    /// `section.key = value` configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// overwrite existing outputs
    #[arg(long, global = true)]
    force: bool,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// worker threads (default: all cores)
    #[arg(long, global = true, env = "FRACSADDLE_THREADS")]
    threads: Option<usize>,
    #[arg(long, global = true)]
    m: Option<usize>,
    #[arg(long, global = true)]
    gamma: Option<f64>,
    #[arg(long, global = true)]
    model: Option<String>,
    /// grid sizes: nodes in s and t, nodes in λ
    #[arg(long, global = true, num_args = 2, value_names = ["N_S", "N_LAMBDA"])]
    grid: Option<Vec<usize>>,
    #[arg(long = "S", global = true)]
    s_max: Option<f64>,
    #[arg(long = "Lambda", global = true)]
    lambda_max: Option<f64>,
    /// saddle solver tolerance
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// supersolution exponents, comma separated
    #[arg(long, global = true, value_delimiter = ',')]
    b: Option<Vec<f64>>,
}

fn resolve(g: &Global) -> Result<RunConfig, CliError> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(v) = &g.out {
        cfg.out = v.clone();
    }
    if let Some(v) = g.seed {
        cfg.seed = v;
    }
    if let Some(v) = g.m {
        cfg.problem.m = v;
    }
    if let Some(v) = g.gamma {
        cfg.problem.gamma = v;
    }
    if let Some(v) = &g.model {
        cfg.problem.model = v.clone();
    }
    if let Some(v) = &g.grid {
        cfg.grid.n_s = v[0];
        cfg.grid.n_lambda = v[1];
    }
    if let Some(v) = g.s_max {
        cfg.grid.s_max = v;
    }
    if let Some(v) = g.lambda_max {
        cfg.grid.lambda_max = v;
    }
    if let Some(v) = g.tol {
        cfg.saddle.tol = v;
    }
    if let Some(v) = &g.b {
        cfg.verify.b = v.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<Outcome, CliError> {
    if let Some(n) = cli.global.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    let cfg = resolve(&cli.global)?;
    let stage = match cli.command {
        Command::Calibrate => Stage::Calibrate,
        Command::Layer => Stage::Layer,
        Command::Saddle => Stage::Saddle,
        Command::Verify => Stage::Verify,
        Command::Stability => Stage::Stability,
        Command::Geometry => Stage::Geometry,
        Command::Pipeline => Stage::Pipeline,
    };
    let out = OutDir::new(&cfg.out, cli.global.force)?;
    let outcome = run(stage, &cfg, &out)?;
    out.write_manifest(&cfg)?;
    Ok(outcome)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(Outcome::Passed) => ExitCode::SUCCESS,
        Ok(Outcome::Failed) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
