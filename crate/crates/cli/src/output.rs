use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;

use crate::config::RunConfig;

/// Version of every JSON document the tool writes.
pub const SCHEMA_VERSION: u32 = 1;

/// Provenance fields shared by all JSON outputs. Wall-clock fields are
/// dropped under `--deterministic`.
#[derive(Debug, Serialize)]
pub struct Meta {
    pub schema_version: u32,
    pub command: &'static str,
    pub tool_version: &'static str,
    pub case: String,
    pub sidecar: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generated_unix_s: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub elapsed_s: Option<f64>,
}

impl Meta {
    pub fn new(cfg: &RunConfig, command: &'static str, elapsed: Duration) -> Self {
        let wall = !cfg.deterministic;
        Self {
            schema_version: SCHEMA_VERSION,
            command,
            tool_version: env!("CARGO_PKG_VERSION"),
            case: cfg.case_label(),
            sidecar: cfg.sidecar_label(),
            seed: cfg.seed,
            generated_unix_s: wall.then(|| SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())),
            elapsed_s: wall.then_some(elapsed.as_secs_f64()),
        }
    }
}

pub fn out_path(cfg: &RunConfig, name: &str) -> Result<PathBuf> {
    let path = cfg.out_dir.join(name);
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(path)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

/// Writes RFC 4180 CSV (CRLF line endings).
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_path(path)
        .with_context(|| format!("writing {}", path.display()))?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    log::info!("wrote {}", path.display());
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

pub fn num(x: f64) -> String {
    format!("{x}")
}
