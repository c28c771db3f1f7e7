use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use super::config::{config_hash, load_config};
use super::figures::{fig1_rows, fig2_rows, fig3_rows, FIG1_HEADER, FIG2_HEADER, FIG3_HEADER};
use super::output::{write_events_csv, write_numeric_csv, write_trace_csv, ManifestSummary, RunManifest};
use super::sweep::{expand, run_sweep, write_summary, SweepRow};
use super::CliError;
use crate::engine::{run_simulation, SimulationTrace};

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Output {
        path: dir.to_path_buf(),
        source,
    })
}

/// Runs one simulation and writes `trace.csv`, `events.csv` and `manifest.json`.
pub fn cmd_simulate(config_path: &Path, out_dir: &Path) -> Result<SimulationTrace<f64>, CliError> {
    let started = Instant::now();
    let file = load_config(config_path)?;
    let trace = run_simulation(&file.pack).map_err(|e| CliError::from_engine(config_path, e))?;
    ensure_dir(out_dir)?;
    let trace_path = out_dir.join("trace.csv");
    let events_path = out_dir.join("events.csv");
    let manifest_path = out_dir.join("manifest.json");
    write_trace_csv(&trace_path, &trace)?;
    write_events_csv(&events_path, &trace)?;
    RunManifest::new(
        config_hash(&file.pack),
        started.elapsed().as_secs_f64(),
        vec![trace_path, events_path, manifest_path.clone()],
        ManifestSummary::from_trace(&trace),
    )
    .write(&manifest_path)?;
    Ok(trace)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FigureOptions {
    /// Scale the pulsed profile so its mean flux equals the constant run's.
    pub charge_matched: bool,
}

/// Writes `fig1.csv`, `fig2.csv` and `fig3.csv`.
pub fn cmd_figures(out_dir: &Path, options: FigureOptions) -> Result<Vec<PathBuf>, CliError> {
    ensure_dir(out_dir)?;
    let fig1 = fig1_rows().map_err(|e| CliError::Other(e.to_string()))?;
    let fig2 = fig2_rows(options.charge_matched).map_err(|e| CliError::Other(e.to_string()))?;
    let fig3 = fig3_rows();
    let paths: Vec<PathBuf> = ["fig1.csv", "fig2.csv", "fig3.csv"]
        .iter()
        .map(|f| out_dir.join(f))
        .collect();
    write_numeric_csv(&paths[0], &FIG1_HEADER, &fig1)?;
    write_numeric_csv(&paths[1], &FIG2_HEADER, &fig2)?;
    write_numeric_csv(&paths[2], &FIG3_HEADER, &fig3)?;
    Ok(paths)
}

#[derive(Debug, Serialize)]
struct SweepSummary {
    runs: usize,
    workers: usize,
}

/// Runs the Cartesian sweep described by the config's `[sweep]` block and
/// writes `summary.csv` plus `manifest.json`.
pub fn cmd_sweep(config_path: &Path, out_dir: &Path, workers: usize) -> Result<Vec<SweepRow>, CliError> {
    let started = Instant::now();
    let file = load_config(config_path)?;
    let spec = file.sweep.ok_or_else(|| CliError::ConfigInvalid {
        path: config_path.to_path_buf(),
        field: "sweep".into(),
        message: "config has no [sweep] block".into(),
    })?;
    let runs = expand(&file.pack, &spec, config_path)?;
    let rows = run_sweep(&runs, workers, config_path)?;
    ensure_dir(out_dir)?;
    let summary_path = out_dir.join("summary.csv");
    let manifest_path = out_dir.join("manifest.json");
    write_summary(&summary_path, &spec, &rows)?;
    RunManifest::new(
        config_hash(&(&file.pack, &spec)),
        started.elapsed().as_secs_f64(),
        vec![summary_path, manifest_path.clone()],
        SweepSummary {
            runs: rows.len(),
            workers,
        },
    )
    .write(&manifest_path)?;
    Ok(rows)
}
