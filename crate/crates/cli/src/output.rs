use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use kam_core::{ErrorBounds, IntegrableSpec, IterationRecord, PlacedTorus, ReductionRecipe, ScheduleEntry};
use serde::{Deserialize, Serialize};

use crate::config::SCHEMA_VERSION;
use crate::CliError;

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Numerical(format!("{}: {e}", path.display())))?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

pub fn csv_writer(path: &Path) -> Result<csv::Writer<File>, CliError> {
    csv::Writer::from_path(path).map_err(csv_error)
}

pub fn csv_error(e: csv::Error) -> CliError {
    CliError::Io(std::io::Error::other(e))
}

/// Shortest round-trip representation, so CSV values parse back exactly.
pub fn num(x: f64) -> String {
    format!("{x:e}")
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Versions {
    pub schema: u32,
    pub kam_core: String,
    pub kam_cli: String,
}

impl Versions {
    pub fn current() -> Self {
        Self {
            schema: SCHEMA_VERSION,
            kam_core: kam_core::VERSION.to_string(),
            kam_cli: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ScheduleSummary {
    pub q0: u64,
    pub tail: f64,
    pub tail_threshold: f64,
    pub sigma_sum: f64,
    pub entries: Vec<ScheduleEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RunResult {
    pub schema: u32,
    pub converged: bool,
    pub reason: String,
    pub iterations: usize,
    pub final_remainder: f64,
    pub omega0: Vec<f64>,
    pub omega_tilde: Vec<f64>,
    pub error_bounds: ErrorBounds,
    pub system: IntegrableSpec,
    pub reduction: ReductionRecipe,
    pub schedule: ScheduleSummary,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Embedding {
    pub schema: u32,
    #[serde(flatten)]
    pub torus: PlacedTorus,
}

pub fn write_iterations(path: &Path, history: &[IterationRecord]) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    w.write_record(["i", "eps_i", "measured", "sigma_i", "Q_i", "telescope"])
        .map_err(csv_error)?;
    for r in history {
        w.write_record([
            r.i.to_string(),
            num(r.eps),
            num(r.measured),
            num(r.sigma),
            r.q.to_string(),
            num(r.telescope),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}
