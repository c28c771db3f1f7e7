//! Command-line front end: config files, simulation/figure/sweep commands and
//! their CSV and JSON outputs.

pub mod commands;
pub mod config;
pub mod figures;
pub mod output;
pub mod sweep;

use std::path::PathBuf;

use thiserror::Error;

use crate::engine::EngineError;

pub use commands::{cmd_figures, cmd_simulate, cmd_sweep, FigureOptions};

/// Process exit codes.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const IO: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const NUMERICAL: i32 = 3;
    pub const INFEASIBLE: i32 = 4;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read config {path}: {source}")]
    ConfigRead {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {message}")]
    ConfigParse { path: PathBuf, message: String },
    #[error("invalid config {path}: field `{field}`: {message}")]
    ConfigInvalid {
        path: PathBuf,
        field: String,
        message: String,
    },
    #[error("simulation of {path} failed: {source}")]
    Simulation {
        path: PathBuf,
        #[source]
        source: EngineError,
    },
    #[error("cannot write {path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error writing {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::ConfigRead { .. } | CliError::ConfigParse { .. } | CliError::ConfigInvalid { .. } => exit::CONFIG,
            CliError::Simulation { source, .. } => match source {
                EngineError::Config { .. } => exit::CONFIG,
                EngineError::Infeasible { .. } => exit::INFEASIBLE,
                _ => exit::NUMERICAL,
            },
            CliError::Output { .. } | CliError::Csv { .. } | CliError::Other(_) => exit::IO,
        }
    }

    pub(crate) fn from_engine(path: &std::path::Path, err: EngineError) -> Self {
        match err {
            EngineError::Config { field, message } => CliError::ConfigInvalid {
                path: path.to_path_buf(),
                field,
                message,
            },
            source => CliError::Simulation {
                path: path.to_path_buf(),
                source,
            },
        }
    }
}
