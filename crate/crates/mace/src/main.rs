use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mace::config::{self, Algorithm};
use mace::run_campaign;
use mace_core::engine::Mode;
use mace_core::problems::{builtin, BUILTIN_NAMES};
use serde_json::{Map, Value};

#[derive(Parser)]
#[command(
    name = "mace",
    version,
    about = "Batch Bayesian optimization via acquisition-ensemble Pareto sampling"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a repeated-seed campaign.
    Run(Box<RunArgs>),
    /// List the built-in benchmark problems.
    Problems,
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment spec; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in problem name or `cmd:<shell command>`.
    #[arg(long)]
    problem: Option<String>,
    /// Input dimension (external evaluators).
    #[arg(long)]
    dim: Option<usize>,
    /// Number of constraints (external evaluators).
    #[arg(long)]
    constraints: Option<usize>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
    #[arg(long, value_enum)]
    algo: Option<AlgoArg>,
    /// Batch size B.
    #[arg(long)]
    batch: Option<usize>,
    /// Total evaluations per run, initial design included.
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    n_init: Option<usize>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated subset of pi,ei,lcb.
    #[arg(long)]
    ensemble: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    rho: Option<f64>,
    #[arg(long)]
    max_parallel: Option<usize>,
    /// Per-reply timeout for external evaluators, in seconds.
    #[arg(long, allow_negative_numbers = true)]
    timeout: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the resolved spec and exit.
    #[arg(long)]
    print_spec: bool,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum AlgoArg {
    Mace,
    Omace,
    Random,
    SequentialEi,
    SequentialLcb,
}

impl From<AlgoArg> for Algorithm {
    fn from(a: AlgoArg) -> Self {
        match a {
            AlgoArg::Mace => Algorithm::Mace,
            AlgoArg::Omace => Algorithm::Omace,
            AlgoArg::Random => Algorithm::Random,
            AlgoArg::SequentialEi => Algorithm::SequentialEi,
            AlgoArg::SequentialLcb => Algorithm::SequentialLcb,
        }
    }
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    match s {
        "unconstrained" => Ok(Mode::Unconstrained),
        "constrained" => Ok(Mode::Constrained),
        _ => Err(format!("expected `unconstrained` or `constrained`, got `{s}`")),
    }
}

impl RunArgs {
    fn overrides(&self) -> Map<String, Value> {
        let mut m = Map::new();
        let mut put = |k: &str, v: Option<Value>| {
            if let Some(v) = v {
                m.insert(k.to_string(), v);
            }
        };
        put("problem", self.problem.clone().map(Value::from));
        put("dim", self.dim.map(Value::from));
        put("constraints", self.constraints.map(Value::from));
        put(
            "mode",
            self.mode.map(|md| serde_json::to_value(md).expect("mode serializes")),
        );
        put("algorithm", self.algo.map(|a| Value::from(Algorithm::from(a).as_str())));
        put("batch", self.batch.map(Value::from));
        put("budget", self.budget.map(Value::from));
        put("n_init", self.n_init.map(Value::from));
        put("repeats", self.repeats.map(Value::from));
        put("seed", self.seed.map(Value::from));
        put("ensemble", self.ensemble.clone().map(Value::from));
        put("rho", self.rho.map(Value::from));
        put("max_parallel", self.max_parallel.map(Value::from));
        put("timeout_secs", self.timeout.map(Value::from));
        put(
            "out",
            self.out.as_ref().map(|p| Value::from(p.to_string_lossy().into_owned())),
        );
        m
    }
}

/// Writes to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) -> anyhow::Result<()> {
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn run(args: RunArgs) -> anyhow::Result<()> {
    let spec = config::load(args.config.as_deref(), args.overrides())?;
    if args.print_spec {
        emit(&spec.to_json())?;
        return Ok(());
    }
    let campaign = run_campaign(&spec)?;
    emit(&serde_json::to_string_pretty(&campaign.summary)?)?;
    eprintln!("results written to {}", spec.out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Run(args) => run(*args),
        Cmd::Problems => {
            let lines: Vec<String> = BUILTIN_NAMES
                .iter()
                .map(|name| {
                    let p = builtin(name).expect("built-in problem");
                    format!("{name}\tdim={}\tconstraints={}", p.dim(), p.n_constraints())
                })
                .collect();
            emit(&lines.join("\n"))
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
