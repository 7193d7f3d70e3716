use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand};
use mlp_core::analysis::{cost_fe_exact, cost_rn_exact};
use mlp_core::experiment::{
    run_convergence, run_selfcheck, CheckGrid, ExperimentConfig, Fault, LevelSpec, OutputFormat,
    PointSpec,
};
use mlp_core::problems::{ProblemSpec, PROBLEM_NAMES};
use mlp_core::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_SELFCHECK: u8 = 3;
const EXIT_BUDGET: u8 = 4;

/// Multilevel Picard approximations for semilinear heat equations.
#[derive(Debug, Parser)]
#[command(name = "mlp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Empirical L² errors and costs over a list of levels.
    Convergence(ConvergenceArgs),
    /// Quadrature identities and bounds, cost checks and problem residuals.
    Selfcheck(SelfcheckArgs),
    /// Predicted RN and FE for a list of levels.
    Costs(CostsArgs),
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("levels").required(true).args(["diagonal", "level"])))]
struct LevelArgs {
    /// Run n = M = Q for n = 1..=N.
    #[arg(long, value_name = "N")]
    diagonal: Option<u32>,
    /// One (n, M, Q) triple; repeatable.
    #[arg(long, value_name = "n,M,Q", value_parser = parse_level)]
    level: Vec<(u32, u32, usize)>,
}

impl LevelArgs {
    fn spec(&self) -> LevelSpec {
        match self.diagonal {
            Some(n) => LevelSpec::Diagonal(n),
            None => LevelSpec::List(self.level.clone()),
        }
    }
}

#[derive(Debug, Args)]
struct ConvergenceArgs {
    #[arg(long, default_value = "manufactured_sine")]
    problem: String,
    /// Problem parameter override; repeatable.
    #[arg(long, value_name = "KEY=VALUE", value_parser = parse_param)]
    param: Vec<(String, f64)>,
    #[arg(long, default_value_t = 2)]
    dim: usize,
    /// Comma-separated coordinates, or `random` for a point drawn in the
    /// problem's box from the seed.
    #[arg(long, default_value = "random", allow_hyphen_values = true)]
    x: String,
    #[arg(long, default_value_t = 0.0)]
    t0: f64,
    #[command(flatten)]
    levels: LevelArgs,
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    #[arg(long, env = "MLP_SEED", default_value_t = 0)]
    seed: u64,
    /// Worker threads for the replication loop (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Output file (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "csv", value_parser = parse_format)]
    format: OutputFormat,
    /// Write wall_ms as 0 so that repeated runs give identical files.
    #[arg(long)]
    no_wall_time: bool,
}

#[derive(Debug, Args)]
struct SelfcheckArgs {
    /// Run with an empty case grid.
    #[arg(long)]
    empty_grid: bool,
    /// Perturb one quadrature weight by this relative amount before checking
    /// the iterated identity.
    #[arg(long, value_name = "RELATIVE")]
    inject_fault: Option<f64>,
}

#[derive(Debug, Args)]
struct CostsArgs {
    #[arg(long, default_value_t = 1)]
    dim: usize,
    #[command(flatten)]
    levels: LevelArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_level(s: &str) -> Result<(u32, u32, usize), String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let [n, m, q] = parts.as_slice() else {
        return Err(format!("expected n,M,Q, got `{s}`"));
    };
    let err = |e: std::num::ParseIntError| format!("`{s}`: {e}");
    Ok((
        n.parse().map_err(err)?,
        m.parse().map_err(err)?,
        q.parse().map_err(err)?,
    ))
}

fn parse_param(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected KEY=VALUE, got `{s}`"))?;
    let v: f64 = v.trim().parse().map_err(|e| format!("`{s}`: {e}"))?;
    Ok((k.trim().to_string(), v))
}

fn parse_format(s: &str) -> Result<OutputFormat, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_point(s: &str) -> Result<PointSpec, Error> {
    if s == "random" {
        return Ok(PointSpec::RandomInBox);
    }
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("--x `{s}`: {e}")))
        })
        .collect::<Result<Vec<_>, _>>()
        .map(PointSpec::Explicit)
}

fn sink(out: &Option<PathBuf>) -> Result<Box<dyn Write>, Error> {
    Ok(match out {
        Some(path) => Box::new(BufWriter::new(File::create(path).map_err(|e| {
            Error::Config(format!("cannot create {}: {e}", path.display()))
        })?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn convergence(args: ConvergenceArgs) -> Result<(), Error> {
    if !PROBLEM_NAMES.contains(&args.problem.as_str()) {
        return Err(Error::Config(format!(
            "unknown problem `{}`; expected one of {PROBLEM_NAMES:?}",
            args.problem
        )));
    }
    let mut problem = ProblemSpec::new(args.problem);
    for (k, v) in &args.param {
        problem = problem.with(k, *v);
    }
    let mut config = ExperimentConfig::new(problem, args.dim, args.levels.spec());
    config.point = parse_point(&args.x)?;
    config.t0 = args.t0;
    config.replications = args.reps;
    config.seed = args.seed;
    config.threads = args.threads;
    config.format = args.format;
    config.output = args.out;
    config.record_wall_time = !args.no_wall_time;

    let table = run_convergence(&config)?;
    let mut out = sink(&config.output)?;
    table.write_to(config.format, &mut out)?;
    out.flush()?;
    Ok(())
}

fn costs(args: CostsArgs) -> Result<(), Error> {
    let mut out = sink(&args.out)?;
    writeln!(out, "n,M,Q,d,rn_pred,fe_pred")?;
    for (n, m, q) in args.levels.spec().triples() {
        let rn = cost_rn_exact(n, m as u64, q as u64, args.dim as u64)?;
        let fe = cost_fe_exact(n, m as u64, q as u64)?;
        writeln!(out, "{n},{m},{q},{},{rn},{fe}", args.dim)?;
    }
    out.flush()?;
    Ok(())
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Budget { .. } | Error::Overflow(_) => EXIT_BUDGET,
        Error::Domain(_) | Error::Config(_) | Error::Unavailable(..) => EXIT_CONFIG,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Convergence(args) => convergence(args),
        Command::Costs(args) => costs(args),
        Command::Selfcheck(args) => {
            let grid = if args.empty_grid {
                CheckGrid::empty()
            } else {
                CheckGrid::default()
            };
            let fault = args
                .inject_fault
                .map(|relative| Fault::PerturbWeight { relative });
            let report = run_selfcheck(&grid, fault);
            println!("{report}");
            return if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_SELFCHECK)
            };
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
