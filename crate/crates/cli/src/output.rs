//! Artifact plumbing shared by the subcommands: run stamps, stamped
//! writers for the CSV / JSON / PGM / raw-float formats, and the
//! serialisable report records.
//!
//! Determinism contract: everything written through this module is a
//! pure function of the effective config and master seed, so reruns are
//! byte-identical. Wall-clock timings therefore live in a separate
//! `timing.txt` that is explicitly outside the contract.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Identifies the run that produced a file: the hash of the effective
/// config plus the master seed. JSON reports embed it as fields, CSVs as
/// a leading `#` comment, PGMs as a format comment; headerless raw-float
/// files are covered by the `artifacts` list of the JSON report sitting
/// next to them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunStamp {
    pub config_hash: String,
    pub master_seed: u64,
}

impl RunStamp {
    pub fn comment(&self) -> String {
        format!("config={} seed={}", self.config_hash, self.master_seed)
    }
}

pub fn prepare_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))
}

/// Pretty JSON plus a trailing newline; key order follows the struct
/// definition, so output is deterministic.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let body = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Io(format!("serialising {}: {e}", path.display())))?;
    fs::write(path, body + "\n")
        .map_err(|e| CliError::Io(format!("writing {}: {e}", path.display())))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let body = fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("reading {}: {e}", path.display())))?;
    serde_json::from_str(&body)
        .map_err(|e| CliError::Io(format!("parsing {}: {e}", path.display())))
}

/// Shortest exact decimal, matching the trace exporter's convention.
pub fn format_float(v: f64) -> String {
    format!("{v:?}")
}

/// A stamped CSV: `# config=... seed=...`, a header row, then one row
/// per record.
pub fn write_stamped_csv(
    path: &Path,
    stamp: &RunStamp,
    columns: &[&str],
    rows: &[Vec<f64>],
) -> Result<(), CliError> {
    let mut out = Vec::new();
    writeln!(out, "# {}", stamp.comment()).expect("vec write");
    writeln!(out, "{}", columns.join(",")).expect("vec write");
    for row in rows {
        debug_assert_eq!(row.len(), columns.len());
        let fields: Vec<String> = row.iter().map(|v| format_float(*v)).collect();
        writeln!(out, "{}", fields.join(",")).expect("vec write");
    }
    fs::write(path, out).map_err(|e| CliError::Io(format!("writing {}: {e}", path.display())))
}

/// Reads a stamped CSV back: returns the column names and the rows.
/// Leading `#` comment lines are skipped.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), CliError> {
    let body = fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("reading {}: {e}", path.display())))?;
    let mut lines = body.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| CliError::Io(format!("{}: empty csv", path.display())))?;
    let columns: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let row: Result<Vec<f64>, _> =
            line.split(',').map(|f| f.trim().parse::<f64>()).collect();
        let row = row.map_err(|e| {
            CliError::Io(format!("{} row {}: {e}", path.display(), i + 2))
        })?;
        if row.len() != columns.len() {
            return Err(CliError::Io(format!(
                "{} row {}: {} fields, header has {}",
                path.display(),
                i + 2,
                row.len(),
                columns.len()
            )));
        }
        rows.push(row);
    }
    Ok((columns, rows))
}

/// Per-repetition outcome of an estimation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RepSummary {
    pub config_hash: String,
    pub master_seed: u64,
    pub rep: usize,
    pub rep_seed: u64,
    pub problem: String,
    pub algorithm: String,
    pub theta_bar: Vec<f64>,
    /// Only present for joint noise-variance estimation.
    pub sigma2_bar: Option<f64>,
    /// Variance realised by the noise synthesis (the known-noise value).
    pub sigma2_true: f64,
    pub iterations: u64,
    pub stopped_by: String,
    pub saturated: bool,
    /// Quality of the raw observation against the truth, for reference.
    pub degraded_mse_db: f64,
    /// Per-stage kernel settings and estimates; empty for single-stage
    /// algorithms.
    pub stages: Vec<StageSummary>,
    /// Every file this repetition wrote, including headerless raw floats.
    pub artifacts: Vec<String>,
}

/// One refinement stage of a joint noise-variance run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: u32,
    pub gamma: f64,
    pub lambda: f64,
    pub theta_bar: Vec<f64>,
    pub sigma2_bar: f64,
    pub iterations: u64,
}

/// Whole-run aggregate over repetitions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Aggregate {
    pub config_hash: String,
    pub master_seed: u64,
    pub repetitions: usize,
    pub theta_bar_mean: Vec<f64>,
    pub theta_bar_std: Vec<f64>,
    pub sigma2_bar_mean: Option<f64>,
    pub median_iterations: u64,
    pub saturated_runs: usize,
}

/// Reconstruction metrics against the ground truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapMetrics {
    pub config_hash: String,
    pub master_seed: u64,
    pub rep: usize,
    pub theta: Vec<f64>,
    pub mse_db: f64,
    pub psnr_db: f64,
    pub degraded_mse_db: f64,
    pub degraded_psnr_db: f64,
    pub converged: bool,
    pub iterations: u64,
    pub residual: f64,
    pub artifacts: Vec<String>,
}

/// Argmin report of a parameter sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub config_hash: String,
    pub master_seed: u64,
    pub rep: usize,
    pub grid: Vec<f64>,
    pub mse_db: Vec<f64>,
    pub argmin_theta: f64,
    pub argmin_mse_db: f64,
    /// Stored estimate from a previous run, when one was found.
    pub theta_bar: Option<f64>,
    pub mse_at_theta_bar: Option<f64>,
    /// `mse_at_theta_bar - argmin_mse_db` (non-negative; small means the
    /// estimate is close to oracle).
    pub gap_db: Option<f64>,
}

/// Verdict of the convergence diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Diagnosis {
    pub config_hash: String,
    pub master_seed: u64,
    pub rep: usize,
    pub theta_bar: Vec<f64>,
    /// Log-probability trace settled (last-quarter wobble under 5% of
    /// the full range).
    pub stabilised: bool,
    /// Sup-norm of the final ascent direction relative to the first.
    pub grad_residual_ratio: f64,
    pub iat_posterior: f64,
    pub iat_prior: Option<f64>,
    /// Ratio of the two integrated autocorrelation times (prior over
    /// posterior); only meaningful for two-chain runs.
    pub imbalance_ratio: Option<f64>,
}

/// One deterministic self-check of the numerical kernels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleReport {
    pub passed: bool,
    pub checks: Vec<OracleCheck>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_roundtrip_preserves_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let stamp = RunStamp { config_hash: "abcd".into(), master_seed: 7 };
        let rows = vec![vec![1.0, 0.1], vec![2.0, 1e-12]];
        write_stamped_csv(&path, &stamp, &["a", "b"], &rows).unwrap();
        let (cols, back) = read_csv(&path).unwrap();
        assert_eq!(cols, vec!["a", "b"]);
        assert_eq!(back, rows);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# config=abcd seed=7\n"));
    }

    #[test]
    fn json_is_stable_across_writes() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.json");
        let b = dir.path().join("b.json");
        let stamp = RunStamp { config_hash: "ff00".into(), master_seed: 3 };
        write_json(&a, &stamp).unwrap();
        write_json(&b, &stamp).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        let back: RunStamp = read_json(&a).unwrap();
        assert_eq!(back.config_hash, "ff00");
    }
}
