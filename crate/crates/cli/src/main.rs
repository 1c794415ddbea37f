//! `gign`: runs one experiment per invocation and writes its artifacts.
//!
//! Exit codes: 0 ok, 1 a built-in check failed, 2 configuration error,
//! 3 runtime or IO error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand as Command};
use gign_core::acceptance::DEFAULT_SEED;
use gign_core::harness::{load_config, run_scenario, write_artifacts, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "gign", version, about = "Many-server queues with abandonment: simulation, fluid limits, stationary studies")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    /// Scenario file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Root seed; replaces `run.seed` of the scenario.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory; replaces `output.dir` of the scenario.
    #[arg(long, global = true, env = "GIGN_OUT_DIR")]
    out: Option<PathBuf>,

    /// Worker threads for replications (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Print nothing on success.
    #[arg(long, short, global = true)]
    quiet: bool,
}

#[derive(Debug, Clone, Copy, Command)]
enum Cmd {
    /// Event-driven simulation with the audit identities checked per event.
    Simulate,
    /// Fluid equations on a uniform grid.
    Fluid,
    /// Invariant states for the limiting arrival rate.
    Invariant,
    /// Long-run estimates for one system size.
    Stationary,
    /// Stationary estimates along `n_list` against the invariant state.
    Convergence,
    /// M/M/N with λ = N − 1: stationary laws against the fluid path.
    Interchange,
    /// The full acceptance suite.
    Validate,
}

impl Cmd {
    fn sub(self) -> Subcommand {
        match self {
            Cmd::Simulate => Subcommand::Simulate,
            Cmd::Fluid => Subcommand::Fluid,
            Cmd::Invariant => Subcommand::Invariant,
            Cmd::Stationary => Subcommand::Stationary,
            Cmd::Convergence => Subcommand::Convergence,
            Cmd::Interchange => Subcommand::Interchange,
            Cmd::Validate => Subcommand::Validate,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    ExitCode::from(execute(cli) as u8)
}

fn execute(cli: Cli) -> i32 {
    let sub = cli.command.sub();
    if let Some(k) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            eprintln!("error: thread pool: {e}");
            return 3;
        }
    }
    let config = match &cli.config {
        Some(path) => match load_config(path, cli.seed) {
            Ok(c) => Some(c),
            Err(e) => {
                eprintln!("error: {e}");
                return e.exit_code();
            }
        },
        None if sub.config_optional() => None,
        None => {
            eprintln!("error: `{}` needs --config", sub.name());
            return 2;
        }
    };
    let out = cli
        .out
        .or_else(|| config.as_ref().map(|c| PathBuf::from(&c.output.dir)))
        .unwrap_or_else(|| PathBuf::from("out"));
    let outcome = match run_scenario(config.as_ref(), sub, cli.seed.unwrap_or(DEFAULT_SEED)) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let paths = match write_artifacts(&out, &outcome.artifacts) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    if !cli.quiet {
        println!("{}", outcome.summary);
        for p in &paths {
            println!("wrote {}", p.display());
        }
    }
    if !outcome.passed {
        eprintln!("{}: check failed", sub.name());
    }
    outcome.exit_code()
}
