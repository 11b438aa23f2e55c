//! Library backing the `sapg` command-line tool; the binary is a thin
//! argument-parsing wrapper over these modules so integration tests can
//! drive everything in-process.

pub mod commands;
pub mod config;
pub mod output;
pub mod problem;

use clap::{Args, Parser, Subcommand};

/// Failure taxonomy of the command layer. Each variant owns a process
/// exit code: configuration problems exit 2, numerical failures exit 3,
/// I/O failures exit 4 (0 is success).
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl From<sapg_core::Error> for CliError {
    /// Classifies an algorithm-layer error: anything that points at a bad
    /// problem statement is a config error, anything that happened while
    /// the numbers were already flowing is numerical.
    fn from(e: sapg_core::Error) -> Self {
        use sapg_core::Error as E;
        match &e {
            E::ShapeMismatch { .. } | E::InvalidParam { .. } | E::Validation(_) | E::Config(_) => {
                CliError::Config(e.to_string())
            }
            E::Io(_) => CliError::Io(e.to_string()),
            E::NonFinite(_)
            | E::Divergence { .. }
            | E::ProxFailure { .. }
            | E::Quadrature(_)
            | E::ZeroVariance
            | E::NoConvergence { .. } => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "sapg",
    version,
    about = "Estimates regularisation parameters of imaging inverse problems by \
             marginal maximum likelihood, then reconstructs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the stochastic parameter search for every repetition of an
    /// experiment and write traces, summaries and data files
    Estimate(EstimateArgs),
    /// Reconstruct at a fixed parameter (or at a previous estimate) and
    /// report error metrics
    Map(MapArgs),
    /// Reconstruct over a parameter grid and tabulate MSE against truth
    Sweep(SweepArgs),
    /// Convergence diagnostics for a finished estimation run
    Diagnose(DiagnoseArgs),
    /// Deterministic self-checks of the numerical kernels against slow
    /// reference implementations
    OracleSuite(OracleSuiteArgs),
}

/// Flags shared by every experiment-driven subcommand. `--seed`,
/// `--workers` and `--out` override the corresponding config fields
/// before the config hash is computed, so outputs are stamped with what
/// actually ran.
#[derive(Debug, Args, Clone)]
pub struct CommonArgs {
    /// Preset name (denoise-laplace, tv-deblur, wavelet-deconv,
    /// joint-noise) or path to a TOML experiment file
    #[arg(long)]
    pub config: String,
    /// Override run.master_seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override run.workers (0 = automatic)
    #[arg(long)]
    pub workers: Option<usize>,
    /// Override run.output_dir
    #[arg(long)]
    pub out: Option<std::path::PathBuf>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct MapArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Parameter value(s) to reconstruct at, comma-separated; defaults
    /// to the estimate stored in the run directory
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub theta: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Explicit grid of parameter values, comma-separated; defaults to
    /// 12 log-spaced points bracketing the stored estimate
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub theta: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct OracleSuiteArgs {
    /// Directory for the machine-readable report (defaults to the
    /// current directory)
    #[arg(long)]
    pub out: Option<std::path::PathBuf>,
}

/// Dispatches a parsed command line and maps the outcome to an exit
/// code. Errors are printed to stderr here so the binary stays trivial.
pub fn run_cli(cli: Cli) -> i32 {
    let outcome = match cli.command {
        Command::Estimate(args) => commands::estimate::run(&args),
        Command::Map(args) => commands::map::run(&args),
        Command::Sweep(args) => commands::sweep::run(&args),
        Command::Diagnose(args) => commands::diagnose::run(&args),
        Command::OracleSuite(args) => commands::oracle::run(&args),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("sapg: {e}");
            e.exit_code()
        }
    }
}

/// Loads the experiment file named by the common flags and folds the
/// overrides in, returning the effective config.
pub fn load_effective_config(common: &CommonArgs) -> Result<config::ExperimentConfig, CliError> {
    let mut cfg = config::ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.run.master_seed = seed;
    }
    if let Some(workers) = common.workers {
        cfg.run.workers = workers;
    }
    if let Some(out) = &common.out {
        cfg.run.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_taxonomy() {
        assert_eq!(CliError::Config("x".into()).exit_code(), 2);
        assert_eq!(CliError::Numerical("x".into()).exit_code(), 3);
        assert_eq!(CliError::Io("x".into()).exit_code(), 4);
    }

    #[test]
    fn core_errors_classify_sensibly() {
        let e = sapg_core::Error::Validation("bad".into());
        assert_eq!(CliError::from(e).exit_code(), 2);
        let e = sapg_core::Error::NonFinite("objective");
        assert_eq!(CliError::from(e).exit_code(), 3);
        let e = sapg_core::Error::Io(std::io::Error::new(std::io::ErrorKind::NotFound, "gone"));
        assert_eq!(CliError::from(e).exit_code(), 4);
    }

    #[test]
    fn overrides_change_the_config_hash() {
        let base = CommonArgs {
            config: "tv-deblur".into(),
            seed: None,
            workers: None,
            out: None,
        };
        let a = load_effective_config(&base).unwrap();
        let b = load_effective_config(&CommonArgs { seed: Some(9), ..base }).unwrap();
        assert_ne!(a.hash(), b.hash());
        assert_eq!(b.run.master_seed, 9);
    }
}
