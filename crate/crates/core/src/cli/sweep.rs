//! Cartesian parameter sweeps over a base config.

use std::path::Path;

use rayon::prelude::*;
use serde_json::Value;

use super::config::{config_hash, SweepSpec};
use super::CliError;
use crate::engine::{run_simulation, PackConfig};

/// One point of the sweep grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRun {
    pub index: usize,
    pub values: Vec<f64>,
    pub config: PackConfig<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub index: usize,
    pub values: Vec<f64>,
    pub config_hash: String,
    pub pack_specific_energy: f64,
    pub final_capacity_energy: f64,
    pub final_capacity_power: f64,
    pub peak_surface_concentration: f64,
    pub rest_events: usize,
    pub total_rest_time: f64,
}

pub const SUMMARY_FIXED_COLUMNS: [&str; 7] = [
    "config_hash",
    "pack_specific_energy",
    "final_capacity_energy",
    "final_capacity_power",
    "peak_surface_concentration",
    "rest_events",
    "total_rest_time",
];

fn invalid(path: &Path, field: String, message: impl Into<String>) -> CliError {
    CliError::ConfigInvalid {
        path: path.to_path_buf(),
        field,
        message: message.into(),
    }
}

/// Replaces the number at a dotted `path` (array elements by index).
fn set_path(root: &mut Value, path: &str, new: f64) -> Result<(), String> {
    let mut node = root;
    for part in path.split('.') {
        node = match node {
            Value::Object(map) => map.get_mut(part).ok_or_else(|| format!("no key `{part}`"))?,
            Value::Array(items) => {
                let i: usize = part.parse().map_err(|_| format!("`{part}` is not an array index"))?;
                items.get_mut(i).ok_or_else(|| format!("index {i} out of range"))?
            }
            _ => return Err(format!("`{part}` is below a scalar")),
        };
    }
    match node {
        Value::Number(n) if n.is_u64() || n.is_i64() => {
            if new.fract() != 0.0 || new < 0.0 {
                return Err(format!("integer parameter cannot take {new}"));
            }
            *node = Value::from(new as u64);
        }
        Value::Number(_) => {
            *node = serde_json::Number::from_f64(new)
                .map(Value::Number)
                .ok_or_else(|| format!("{new} is not finite"))?;
        }
        other => return Err(format!("not a numeric parameter (found {other})")),
    }
    Ok(())
}

/// Expands the sweep grid, first parameter varying slowest.
pub fn expand(base: &PackConfig<f64>, spec: &SweepSpec, path: &Path) -> Result<Vec<SweepRun>, CliError> {
    if spec.parameters.is_empty() {
        return Err(invalid(
            path,
            "sweep.parameters".into(),
            "sweep block lists no parameters",
        ));
    }
    let base_value = serde_json::to_value(base).expect("config serializes");
    for (i, p) in spec.parameters.iter().enumerate() {
        if p.values.is_empty() {
            return Err(invalid(
                path,
                format!("sweep.parameters.{i}.values"),
                "empty value grid",
            ));
        }
        let mut probe = base_value.clone();
        set_path(&mut probe, &p.path, p.values[0])
            .map_err(|m| invalid(path, format!("sweep.parameters.{i}.path"), format!("`{}`: {m}", p.path)))?;
    }

    let total: usize = spec.parameters.iter().map(|p| p.values.len()).product();
    let mut runs = Vec::with_capacity(total);
    for index in 0..total {
        let mut rem = index;
        let mut values = vec![0.0; spec.parameters.len()];
        for (slot, p) in spec.parameters.iter().enumerate().rev() {
            values[slot] = p.values[rem % p.values.len()];
            rem /= p.values.len();
        }
        let mut value = base_value.clone();
        for (p, v) in spec.parameters.iter().zip(&values) {
            set_path(&mut value, &p.path, *v).map_err(|m| invalid(path, p.path.clone(), m))?;
        }
        let config: PackConfig<f64> =
            serde_json::from_value(value).map_err(|e| invalid(path, format!("sweep run {index}"), e.to_string()))?;
        config
            .validate()
            .map_err(|e| invalid(path, format!("sweep run {index}"), e.to_string()))?;
        runs.push(SweepRun { index, values, config });
    }
    Ok(runs)
}

/// Runs every grid point on a pool of `workers` threads; rows keep grid order.
pub fn run_sweep(runs: &[SweepRun], workers: usize, path: &Path) -> Result<Vec<SweepRow>, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| CliError::Other(format!("cannot start worker pool: {e}")))?;
    let results: Vec<Result<SweepRow, CliError>> = pool.install(|| {
        runs.par_iter()
            .map(|run| {
                let trace = run_simulation(&run.config).map_err(|e| CliError::from_engine(path, e))?;
                let [ce, cp] = trace.final_capacity().unwrap_or([f64::NAN, f64::NAN]);
                Ok(SweepRow {
                    index: run.index,
                    values: run.values.clone(),
                    config_hash: config_hash(&run.config),
                    pack_specific_energy: run
                        .config
                        .pack_specific_energy()
                        .map_err(|e| CliError::from_engine(path, e))?,
                    final_capacity_energy: ce,
                    final_capacity_power: cp,
                    peak_surface_concentration: trace.peak_surface_concentration,
                    rest_events: trace.rest_event_count(),
                    total_rest_time: trace.total_rest_time(),
                })
            })
            .collect()
    });
    results.into_iter().collect()
}

pub fn summary_header(spec: &SweepSpec) -> Vec<String> {
    let mut h = vec!["run".to_string()];
    h.extend(spec.parameters.iter().map(|p| p.path.clone()));
    h.extend(SUMMARY_FIXED_COLUMNS.iter().map(|s| s.to_string()));
    h
}

pub fn write_summary(out: &Path, spec: &SweepSpec, rows: &[SweepRow]) -> Result<(), CliError> {
    let err = |source| CliError::Csv {
        path: out.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(out).map_err(err)?;
    w.write_record(summary_header(spec)).map_err(err)?;
    for r in rows {
        let mut rec = vec![r.index.to_string()];
        rec.extend(r.values.iter().map(|v| v.to_string()));
        rec.push(r.config_hash.clone());
        rec.extend(
            [
                r.pack_specific_energy,
                r.final_capacity_energy,
                r.final_capacity_power,
                r.peak_surface_concentration,
            ]
            .iter()
            .map(|v| v.to_string()),
        );
        rec.push(r.rest_events.to_string());
        rec.push(r.total_rest_time.to_string());
        w.write_record(rec).map_err(err)?;
    }
    w.flush().map_err(|source| CliError::Output {
        path: out.to_path_buf(),
        source,
    })
}
