//! TOML config files.
//!
//! A config file holds the sections of [`PackConfig`] plus an optional
//! `[sweep]` block:
//!
//! ```toml
//! [[sweep.parameters]]
//! path = "composition.power_fraction"
//! values = [0.0, 0.3, 0.6]
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::CliError;
use crate::engine::PackConfig;

const TOP_LEVEL_KEYS: &[&str] = &[
    "composition",
    "chemistry",
    "clusters",
    "protocol",
    "constraints",
    "timing",
    "environment",
    "electrical",
    "accounting",
    "sweep",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepParameter {
    /// Dotted path into the config, e.g. `chemistry.energy.diffusivity`.
    pub path: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default)]
    pub parameters: Vec<SweepParameter>,
}

#[derive(Debug, Deserialize)]
struct SweepSection {
    sweep: Option<SweepSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigFile {
    pub pack: PackConfig<f64>,
    pub sweep: Option<SweepSpec>,
}

pub fn parse_config(text: &str, path: &Path) -> Result<ConfigFile, CliError> {
    let parse_err = |e: toml::de::Error| CliError::ConfigParse {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let table: toml::Table = toml::from_str(text).map_err(parse_err)?;
    if let Some(key) = table.keys().find(|k| !TOP_LEVEL_KEYS.contains(&k.as_str())) {
        return Err(CliError::ConfigInvalid {
            path: path.to_path_buf(),
            field: key.clone(),
            message: format!("unknown section; expected one of {}", TOP_LEVEL_KEYS.join(", ")),
        });
    }
    let pack: PackConfig<f64> = toml::from_str(text).map_err(parse_err)?;
    let sweep = toml::from_str::<SweepSection>(text).map_err(parse_err)?.sweep;
    pack.validate().map_err(|e| CliError::from_engine(path, e))?;
    Ok(ConfigFile { pack, sweep })
}

pub fn load_config(path: &Path) -> Result<ConfigFile, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::ConfigRead {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text, path)
}

/// SHA-256 of the canonical JSON form of a config.
///
/// Object keys are emitted in sorted order, so the hash depends only on the
/// parsed values, not on how the source file ordered them.
pub fn config_hash<S: Serialize>(config: &S) -> String {
    let value = serde_json::to_value(config).expect("config serializes to JSON");
    let canonical = serde_json::to_string(&value).expect("JSON value serializes");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

pub fn to_toml(config: &PackConfig<f64>) -> String {
    toml::to_string(config).expect("config serializes to TOML")
}
