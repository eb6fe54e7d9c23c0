//! Run manifests: the fully resolved record written *before* training
//! starts. A manifest alone is enough to reproduce its run bit for bit —
//! `mcc train manifest.json` replays it.

use std::path::Path;

use serde::{Deserialize, Serialize};

use mcc::trainer::write_atomic;

use crate::config::RunConfig;
use crate::error::{CliError, Result};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    /// Subcommand that produced the run.
    pub command: String,
    pub tool_version: String,
    /// Run seed; also baked into the dataset seeds of `config`.
    pub seed: u64,
    pub out_dir: String,
    /// Resolved configuration: every field explicit, every seed pinned.
    pub config: RunConfig,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, out_dir: &Path, config: RunConfig) -> Self {
        RunManifest {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            out_dir: out_dir.display().to_string(),
            config,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Config(format!("manifest serialization: {e}")))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut json = self.to_json()?;
        json.push('\n');
        write_atomic(path, &json).map_err(CliError::from)
    }
}

/// A file fed to `train`: either a plain config or a manifest replay.
#[derive(Debug, Clone)]
pub enum RunInput {
    Config(RunConfig),
    Manifest(RunManifest),
}

/// Loads a config or manifest, dispatching on the top-level shape: objects
/// with a `command` key are manifests, everything else parses as a config.
pub fn load_run_input(path: &Path) -> Result<RunInput> {
    let label = path.display().to_string();
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{label}: {e}")))?;
    let looks_like_manifest = serde_json::from_str::<serde_json::Value>(&text)
        .map(|v| v.get("command").is_some())
        .unwrap_or(false);
    if looks_like_manifest {
        let manifest = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{label}: {e}")))?;
        Ok(RunInput::Manifest(manifest))
    } else {
        Ok(RunInput::Config(crate::config::parse_config(&text, &label)?))
    }
}
