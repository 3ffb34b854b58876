use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use ris_lab::channel::{digest64, ScenarioConfig};
use ris_lab::Error;
use serde::Serialize;

#[derive(Serialize)]
struct OutputDigest {
    path: String,
    digest: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a [String],
    seed: u64,
    config: serde_json::Value,
    started_at: String,
    finished_at: String,
    outputs: Vec<OutputDigest>,
}

fn stamp(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// Sidecar path `<out>.manifest.json`.
pub fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

/// Hex digest of a file's bytes.
pub fn file_digest(path: &Path) -> Result<String, Error> {
    let bytes = std::fs::read(path).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })?;
    Ok(format!("{:016x}", digest64(&bytes)))
}

pub struct RunRecord {
    pub command: Vec<String>,
    pub seed: u64,
    pub started: DateTime<Utc>,
}

impl RunRecord {
    pub fn start(seed: u64) -> Self {
        RunRecord {
            command: std::env::args().collect(),
            seed,
            started: Utc::now(),
        }
    }

    /// Writes the manifest next to `out`, digesting every file in `outputs`.
    pub fn finish(&self, config: &ScenarioConfig, out: &Path, outputs: &[&Path]) -> Result<PathBuf, Error> {
        let config = serde_json::from_str(&config.canonical_json()).expect("canonical config is valid JSON");
        let outputs = outputs
            .iter()
            .map(|p| {
                Ok(OutputDigest {
                    path: p.display().to_string(),
                    digest: file_digest(p)?,
                })
            })
            .collect::<Result<_, Error>>()?;
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: &self.command,
            seed: self.seed,
            config,
            started_at: stamp(self.started),
            finished_at: stamp(Utc::now()),
            outputs,
        };
        let path = manifest_path(out);
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
        Ok(path)
    }
}
