//! Machine-readable report envelope.
//!
//! Every JSON report has the same top level: `schema_version`, `command`,
//! `environment`, `deterministic` and an optional `timing` section. For fixed
//! flags and seed the `deterministic` section is byte-identical across runs;
//! wall-clock measurements live only in `timing`.

use std::fs;
use std::path::Path;

use axialvig::Error;
use serde::Serialize;

/// Bumped on any change to report fields.
pub const SCHEMA_VERSION: u32 = 1;

/// The committed JSON Schema for every report.
pub const SCHEMA: &str = include_str!("../schema/report.schema.json");

#[derive(Debug, Clone, Serialize)]
pub struct Environment {
    pub dtype: String,
    pub threads: usize,
    pub version: &'static str,
}

impl Environment {
    pub fn new(dtype: impl Into<String>, threads: usize) -> Self {
        Self {
            dtype: dtype.into(),
            threads,
            version: env!("CARGO_PKG_VERSION"),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Report<D: Serialize, V: Serialize> {
    pub schema_version: u32,
    pub command: &'static str,
    pub environment: Environment,
    pub deterministic: D,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing: Option<V>,
}

impl<D: Serialize, V: Serialize> Report<D, V> {
    pub fn new(command: &'static str, environment: Environment, deterministic: D, timing: Option<V>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            command,
            environment,
            deterministic,
            timing,
        }
    }

    pub fn to_json(&self) -> Result<String, Error> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(format!("report serialization: {e}")))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), Error> {
        let mut text = self.to_json()?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }
}

/// Worker thread cap from `AXIALVIG_THREADS`, default 1.
pub fn threads_from_env() -> Result<usize, Error> {
    match std::env::var("AXIALVIG_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| Error::Config(format!("AXIALVIG_THREADS must be a positive integer, got {v:?}"))),
    }
}
