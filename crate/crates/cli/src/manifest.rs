use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::CliError;

/// Provenance of one run, written as `manifest.json` next to its outputs.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub args: Value,
    pub config: RunConfig,
    pub seed: Option<u64>,
    pub versions: Value,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, args: Value, config: &RunConfig, seed: Option<u64>) -> Self {
        Self {
            command: command.to_string(),
            args,
            config: config.clone(),
            seed,
            versions: json!({
                "clayshape": env!("CARGO_PKG_VERSION"),
                "checkpoint_format": clayshape::checkpoint::CHECKPOINT_VERSION,
            }),
            outputs: Vec::new(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf, CliError> {
        let path = dir.join("manifest.json");
        write_json(&path, &serde_json::to_value(self).expect("plain data"))?;
        Ok(path)
    }
}

pub fn write_json(path: &Path, value: &Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("plain data");
    std::fs::write(path, text + "\n").map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))
}
