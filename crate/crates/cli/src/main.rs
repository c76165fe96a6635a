// `!(x > 0.0)` style guards also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kam_core::{ErrorClass, KamError};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("condition not met: {0}")]
    Condition(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl From<KamError> for CliError {
    fn from(e: KamError) -> Self {
        match e.class() {
            ErrorClass::Input => CliError::Usage(e.to_string()),
            ErrorClass::Condition => CliError::Condition(e.to_string()),
            ErrorClass::Numerical => CliError::Numerical(e.to_string()),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Condition(_) => 2,
            CliError::Numerical(_) | CliError::Io(_) => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "kam", version, about = "Invariant tori by rational-approximation KAM iteration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Tabulate Ψ, Δ and the tail integral of a frequency (CSV on stdout).
    Analyze {
        #[arg(long, default_value = "golden")]
        freq: String,
        #[arg(long, default_value_t = 50)]
        qmax: u64,
        /// Width s used to pick Q₀ for the summary.
        #[arg(long, default_value_t = 0.4)]
        s: f64,
        #[arg(long, default_value_t = 1.0)]
        c: f64,
        /// Write profile.csv and summary.json here instead of printing the table.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Unimodular basis of rational approximants at scale Q (JSON on stdout).
    Approx {
        #[arg(long)]
        freq: String,
        #[arg(long = "Q", alias = "q")]
        q: f64,
    },
    /// Full iteration from a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// A single KAM step on the reduced system of a config.
    Step {
        #[arg(long)]
        config: PathBuf,
        /// Write the step report JSON to this file (stdout when absent).
        #[arg(long)]
        dump_report: Option<PathBuf>,
    },
    /// Dynamical checks of a computed torus.
    Verify {
        #[arg(long)]
        result: PathBuf,
        #[arg(long)]
        embedding: PathBuf,
        #[arg(long, default_value_t = 100.0)]
        tmax: f64,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long, default_value_t = 32)]
        grid: usize,
        /// Directory for verification.json and trajectory.csv (defaults to the result's directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn init_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("KAM_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("KAM_THREADS = `{v}` is not a thread count")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("KAM_THREADS: {e}")))?;
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    match cli.command {
        Command::Analyze { freq, qmax, s, c, out } => commands::analyze(&freq, qmax, s, c, out.as_deref()),
        Command::Approx { freq, q } => commands::approx(&freq, q),
        Command::Run { config, out } => commands::run(&config, out),
        Command::Step { config, dump_report } => commands::step(&config, dump_report.as_deref()),
        Command::Verify {
            result,
            embedding,
            tmax,
            dt,
            grid,
            out,
        } => commands::verify(&result, &embedding, tmax, dt, grid, out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("kam: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
