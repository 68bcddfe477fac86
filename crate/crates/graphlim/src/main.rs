use clap::{Parser, Subcommand};
use graphlim::config::{self, ConvergeConfig, PicardRunConfig, SimulateConfig, ValidateConfig};
use graphlim::runner::{self, diag, Outcome};
use graphlim::Error;
use std::path::PathBuf;
use std::process::ExitCode;

/// Particle systems on adaptive networks and their graphon limit.
#[derive(Parser)]
#[command(name = "graphlim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Path to the JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for artifacts (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; defaults to GRAPHLIM_THREADS, then all cores.
    #[arg(long)]
    threads: Option<usize>,
    /// Emit progress diagnostics as JSON lines on stderr.
    #[arg(long)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the N-particle system.
    Simulate(CommonArgs),
    /// Solve the continuum limit by windowed Picard iteration.
    Picard(CommonArgs),
    /// Run an N-sweep convergence study against a fine reference.
    Converge(CommonArgs),
    /// Spot-check the model's bound and Lipschitz constants.
    Validate(CommonArgs),
}

impl Command {
    fn common(&self) -> &CommonArgs {
        match self {
            Command::Simulate(a)
            | Command::Picard(a)
            | Command::Converge(a)
            | Command::Validate(a) => a,
        }
    }
}

fn thread_count(args: &CommonArgs) -> Result<Option<usize>, Error> {
    if let Some(k) = args.threads {
        if k == 0 {
            return Err(Error::Config("--threads must be >= 1".into()));
        }
        return Ok(Some(k));
    }
    match std::env::var("GRAPHLIM_THREADS") {
        Ok(s) => {
            let k: usize = s
                .parse()
                .map_err(|_| Error::Config(format!("GRAPHLIM_THREADS not a thread count: {s:?}")))?;
            if k == 0 {
                return Err(Error::Config("GRAPHLIM_THREADS must be >= 1".into()));
            }
            Ok(Some(k))
        }
        Err(_) => Ok(None),
    }
}

fn run(cli: &Cli) -> Result<Outcome, Error> {
    let args = cli.command.common();
    if let Some(k) = thread_count(args)? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let bytes = std::fs::read(&args.config).map_err(|e| {
        Error::Config(format!("cannot read {}: {e}", args.config.display()))
    })?;
    let hash = config::config_hash(&bytes);
    match &cli.command {
        Command::Simulate(a) => {
            let cfg: SimulateConfig = config::parse(&bytes)?;
            runner::run_simulate(&cfg, &hash, &a.out, a.verbose)
        }
        Command::Picard(a) => {
            let cfg: PicardRunConfig = config::parse(&bytes)?;
            runner::run_picard(&cfg, &hash, &a.out, a.verbose)
        }
        Command::Converge(a) => {
            let cfg: ConvergeConfig = config::parse(&bytes)?;
            runner::run_converge(&cfg, &hash, &a.out, a.verbose)
        }
        Command::Validate(a) => {
            let cfg: ValidateConfig = config::parse(&bytes)?;
            runner::run_validate(&cfg, &hash, &a.out, a.verbose)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Outcome::Success) => ExitCode::from(0),
        Ok(Outcome::SolverAbort) => ExitCode::from(2),
        Err(e @ (Error::Config(_) | Error::InvalidParameter(_))) => {
            diag("config_error", serde_json::json!({ "detail": e.to_string() }));
            ExitCode::from(1)
        }
        Err(e) => {
            diag("error", serde_json::json!({ "detail": e.to_string() }));
            ExitCode::from(2)
        }
    }
}
