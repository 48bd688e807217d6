//! Batch front end: JSON configuration in, CSV out.

pub mod commands;
pub mod config;
mod validate;

use surrender_core::Error;

pub use commands::{price, solve, sweep_n, Command, Report};
pub use config::{RunConfig, Scenario};
pub use validate::validate;

/// Failure classes mapped to process exit codes.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("backend error: {0}")]
    Backend(String),
}

impl CliError {
    pub fn config(e: Error) -> Self {
        Self::Config(e.to_string())
    }

    /// Invalid inputs are configuration errors; everything a backend hits
    /// while computing is a backend error.
    pub fn from_core(e: Error) -> Self {
        use Error::*;
        match e {
            NonPositiveStep(_)
            | InvalidHorizon { .. }
            | NegativeInitial(_)
            | NonPositiveVolatility(_)
            | InvalidRate(_)
            | NonPositiveLambda(_)
            | InvalidDensity(_)
            | EmptySupport
            | UnsupportedDensityModelPair { .. }
            | InvalidTerms(_)
            | TailBoundViolated { .. }
            | BackendMismatch { .. }
            | NonUniformKnots
            | LatticeMismatch { .. }
            | InvalidBudget(_) => Self::Config(e.to_string()),
            DegenerateDenominator { .. }
            | NegativeRateEncountered { .. }
            | NonHyperbolicRegion { .. }
            | SingularSystem(_)
            | DegenerateAlphas
            | QuadratureNonConvergence { .. }
            | SeriesDiverges(_)
            | PoleInB(_)
            | InvalidConfigAtP { .. } => Self::Backend(e.to_string()),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Backend(_) => 3,
        }
    }
}

/// Runs `command` on a local pool of `threads` workers, or on the global pool.
pub fn execute(command: Command, config: &RunConfig, threads: Option<usize>) -> Result<Report, CliError> {
    let scenario = Scenario::resolve(config)?;
    let run = || match command {
        Command::Price => price(&scenario),
        Command::Solve => solve(&scenario),
        Command::Validate => validate(&scenario),
        Command::SweepN => sweep_n(&scenario),
    };
    match threads {
        None => run(),
        Some(0) => Err(CliError::Config("--threads must be at least 1".into())),
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| CliError::Config(format!("cannot start {k} worker threads: {e}")))?
            .install(run),
    }
}
