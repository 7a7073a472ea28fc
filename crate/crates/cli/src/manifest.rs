use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::Value;

use dformer_core::Result;

#[derive(Serialize)]
struct Versions {
    dformer: &'static str,
    checkpoint_format: u32,
}

/// Record of one invocation, written as JSON.
#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Value,
    pub seed: Option<u64>,
    pub artifacts: Vec<PathBuf>,
    pub wall_clock_secs: f64,
    versions: Versions,
}

pub struct ManifestBuilder {
    command: String,
    started: Instant,
}

impl ManifestBuilder {
    pub fn start(command: &str) -> Self {
        Self {
            command: command.to_string(),
            started: Instant::now(),
        }
    }

    pub fn finish(self, config: Value, seed: Option<u64>, artifacts: Vec<PathBuf>) -> RunManifest {
        RunManifest {
            command: self.command,
            config,
            seed,
            artifacts,
            wall_clock_secs: self.started.elapsed().as_secs_f64(),
            versions: Versions {
                dformer: env!("CARGO_PKG_VERSION"),
                checkpoint_format: dformer_core::train::CHECKPOINT_VERSION,
            },
        }
    }
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        std::fs::write(path, bytes).map_err(|e| dformer_core::Error::Io {
            context: format!("writing {}", path.display()),
            source: e,
        })
    }
}

/// `out.ext` → `out.ext.manifest.json`.
pub fn default_path(primary: &Path) -> PathBuf {
    let mut name = primary.as_os_str().to_os_string();
    name.push(".manifest.json");
    PathBuf::from(name)
}
