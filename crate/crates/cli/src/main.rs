//! `degrade`: fit degradation models and emit plot-ready artifacts from a
//! single JSON run configuration.

mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use config::Command;

#[derive(Debug, Parser)]
#[command(name = "degrade", version, about = "Degradation modeling: fit, predict, RUL, thermal index, Kaplan–Meier, simulate")]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; falls back to DEGRADE_THREADS, then all cores.
    #[arg(long)]
    threads: Option<usize>,
}

/// An error with the process exit code it maps to: 2 for invalid input,
/// 3 for numerical failure or non-convergence.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Self { code: 3, message: message.into() }
    }
}

impl From<degrade_core::Error> for CliError {
    fn from(e: degrade_core::Error) -> Self {
        match e {
            degrade_core::Error::Numerical(_) => Self::numerical(e.to_string()),
            _ => Self::config(e.to_string()),
        }
    }
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    if let Some(n) = flag {
        return Ok(Some(n));
    }
    match std::env::var("DEGRADE_THREADS") {
        Ok(v) if !v.trim().is_empty() => {
            v.trim().parse().map(Some).map_err(|_| CliError::config(format!("DEGRADE_THREADS must be a positive integer, got {v:?}")))
        }
        _ => Ok(None),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = (|| {
        if let Some(n) = thread_count(cli.threads)? {
            if n == 0 {
                return Err(CliError::config("thread count must be positive"));
            }
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| CliError::config(format!("cannot configure thread pool: {e}")))?;
        }
        let mut cfg = config::RunConfig::load(&cli.config)?;
        if let Some(c) = cfg.command {
            if c != cli.command {
                return Err(CliError::config(format!(
                    "config is for `{}` but `{}` was requested",
                    c.name(),
                    cli.command.name()
                )));
            }
        }
        if cli.seed.is_some() {
            cfg.seed = cli.seed;
        }
        if let Some(out) = cli.out {
            cfg.output.dir = Some(out);
        }
        run::run(cli.command, &cfg)
    })();
    match result {
        Ok(outcome) if outcome.converged => {
            println!("{}", outcome.summary);
            ExitCode::SUCCESS
        }
        Ok(outcome) => {
            println!("{}", outcome.summary);
            eprintln!("error: convergence checks failed; artifacts were written with converged=false");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
