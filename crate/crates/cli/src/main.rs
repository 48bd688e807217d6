use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use surrender_cli::config::BackendChoice;
use surrender_cli::{execute, Command, RunConfig};

/// Break-even premiums for whole-life contracts with mortality and surrender.
#[derive(Parser)]
#[command(name = "surrender-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Expected return per capita at each configured premium.
    Price(Common),
    /// Break-even premiums by bracketing root search.
    Solve(Common),
    /// Oracle-versus-analytic checks; exit 0 iff none fail.
    Validate(Common),
    /// Break-even premium against the lattice size N.
    SweepN(Common),
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// CSV destination; defaults to the configured output, else stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the configured backend.
    #[arg(long, value_enum)]
    backend: Option<BackendChoice>,
    /// Worker threads for simulation.
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Cmd::Price(a) => (Command::Price, a),
        Cmd::Solve(a) => (Command::Solve, a),
        Cmd::Validate(a) => (Command::Validate, a),
        Cmd::SweepN(a) => (Command::SweepN, a),
    };
    let mut config = match RunConfig::from_path(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("surrender-lab: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(backend) = args.backend {
        config.backend = backend;
    }
    let report = match execute(command, &config, args.threads) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("surrender-lab: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let written = match args.out.or(config.output) {
        Some(path) => std::fs::write(&path, &report.csv).map_err(|e| format!("cannot write {}: {e}", path.display())),
        None => std::io::stdout().write_all(report.csv.as_bytes()).map_err(|e| format!("cannot write stdout: {e}")),
    };
    if let Err(msg) = written {
        eprintln!("surrender-lab: {msg}");
        return ExitCode::from(2);
    }
    if report.success {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
