//! CSV traces and the JSON run manifest.

use std::path::{Path, PathBuf};

use serde::Serialize;

use super::CliError;
use crate::engine::SimulationTrace;

/// Bumped whenever a column is added, removed, renamed or reordered.
pub const CSV_SCHEMA_VERSION: u32 = 1;

pub const TRACE_LEADING_COLUMNS: [&str; 3] = ["time", "applied_level", "pack_voltage"];
pub const TRACE_CLUSTER_COLUMNS: [&str; 6] = [
    "mode",
    "current",
    "surface_concentration",
    "temperature",
    "resistance",
    "soc",
];
pub const TRACE_TRAILING_COLUMNS: [&str; 4] = ["cycles_energy", "cycles_power", "capacity_energy", "capacity_power"];
pub const EVENT_COLUMNS: [&str; 5] = ["time", "cluster", "kind", "reason", "score"];

pub fn trace_header(clusters: usize) -> Vec<String> {
    let mut header: Vec<String> = TRACE_LEADING_COLUMNS.iter().map(|s| s.to_string()).collect();
    for i in 0..clusters {
        header.extend(TRACE_CLUSTER_COLUMNS.iter().map(|c| format!("c{i}_{c}")));
    }
    header.extend(TRACE_TRAILING_COLUMNS.iter().map(|s| s.to_string()));
    header
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>, CliError> {
    csv::Writer::from_path(path).map_err(|source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    })
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes a header row followed by numeric rows. Values use Rust's shortest
/// round-trip formatting.
pub fn write_numeric_csv(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(csv_err(path))?;
    for row in rows {
        w.write_record(row.iter().map(|v| v.to_string()))
            .map_err(csv_err(path))?;
    }
    w.flush().map_err(|source| CliError::Output {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_trace_csv(path: &Path, trace: &SimulationTrace<f64>) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    w.write_record(trace_header(trace.clusters.len()))
        .map_err(csv_err(path))?;
    let mut record: Vec<String> = Vec::new();
    for k in 0..trace.time.len() {
        record.clear();
        record.push(trace.time[k].to_string());
        record.push(trace.applied_level[k].to_string());
        record.push(trace.pack_voltage[k].to_string());
        for s in &trace.cluster_series {
            record.push(s.mode[k].as_str().to_string());
            record.push(s.current[k].to_string());
            record.push(s.surface_concentration[k].to_string());
            record.push(s.temperature[k].to_string());
            record.push(s.resistance[k].to_string());
            record.push(s.soc[k].to_string());
        }
        let [ne, np] = trace.equivalent_cycles[k];
        let [ce, cp] = trace.retained_capacity[k];
        record.extend([ne, np, ce, cp].iter().map(|v| v.to_string()));
        w.write_record(&record).map_err(csv_err(path))?;
    }
    w.flush().map_err(|source| CliError::Output {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_events_csv(path: &Path, trace: &SimulationTrace<f64>) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    w.write_record(EVENT_COLUMNS).map_err(csv_err(path))?;
    for e in &trace.events {
        let kind = serde_json::to_value(e.kind).expect("enum serializes");
        let reason = serde_json::to_value(e.reason).expect("enum serializes");
        w.write_record([
            e.time.to_string(),
            e.cluster.to_string(),
            kind.as_str().unwrap_or_default().to_string(),
            reason.as_str().unwrap_or_default().to_string(),
            e.score.to_string(),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(|source| CliError::Output {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CapacitySummary {
    pub energy: f64,
    pub power: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManifestSummary {
    pub protocol: String,
    pub final_capacity: CapacitySummary,
    pub peak_surface_concentration: f64,
    pub rest_events: usize,
    pub steps: usize,
    pub dt: f64,
}

impl ManifestSummary {
    pub fn from_trace(trace: &SimulationTrace<f64>) -> Self {
        let [energy, power] = trace.final_capacity().unwrap_or([f64::NAN, f64::NAN]);
        Self {
            protocol: trace.protocol.clone(),
            final_capacity: CapacitySummary { energy, power },
            peak_surface_concentration: trace.peak_surface_concentration,
            rest_events: trace.rest_event_count(),
            steps: trace.steps,
            dt: trace.dt,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest<S: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub csv_schema_version: u32,
    pub config_hash: String,
    pub wall_clock_seconds: f64,
    pub outputs: Vec<PathBuf>,
    pub summary: S,
}

impl<S: Serialize> RunManifest<S> {
    pub fn new(config_hash: String, wall_clock_seconds: f64, outputs: Vec<PathBuf>, summary: S) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            csv_schema_version: CSV_SCHEMA_VERSION,
            config_hash,
            wall_clock_seconds,
            outputs,
            summary,
        }
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        // Non-finite summary values become null rather than failing the run.
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::Other(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|source| CliError::Output {
            path: path.to_path_buf(),
            source,
        })
    }
}
