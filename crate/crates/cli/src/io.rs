use std::io::Write;
use std::path::Path;
use std::time::Duration;

use anyhow::{anyhow, Context};
use ptz_slam::PtzError;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

/// Exit class of a failed command: 1 for usage and config problems, 2 when
/// estimation itself fails.
#[derive(Debug)]
pub enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<PtzError> for Failure {
    fn from(e: PtzError) -> Self {
        match e {
            PtzError::Io(_)
            | PtzError::Json(_)
            | PtzError::InvalidInput(_)
            | PtzError::UnsupportedSchema(_) => Failure::Usage(e.into()),
            _ => Failure::Runtime(e.into()),
        }
    }
}

pub fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

/// Reads a JSON config, expanding `preset` keys when `presets` is set, and
/// returns the typed value with the resolved JSON it came from.
pub fn load_config<T: DeserializeOwned>(path: &Path, presets: bool) -> Result<(T, Value), Failure> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(usage)?;
    let mut value: Value = serde_json::from_str(&text)
        .map_err(|e| anyhow!("{}: {e}", path.display()))
        .map_err(usage)?;
    if presets {
        value = ptz_slam::sim::presets::resolve(value)
            .map_err(|e| anyhow!("{}: {e}", path.display()))
            .map_err(usage)?;
    }
    let typed = serde_path_to_error::deserialize(value.clone())
        .map_err(|e| anyhow!("{}: field `{}`: {}", path.display(), e.path(), e.inner()))
        .map_err(usage)?;
    Ok((typed, value))
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), Failure> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(usage)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(usage)?;
    tmp.write_all(contents).map_err(usage)?;
    tmp.persist(path)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(usage)?;
    Ok(())
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(usage)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<String>,
    pub config: Value,
    pub seeds: Value,
    pub output: String,
    pub tool_version: &'static str,
    pub duration_s: f64,
}

impl RunManifest {
    pub fn new(
        command: &str,
        config_path: Option<&Path>,
        config: Value,
        seeds: Value,
        output: &Path,
        elapsed: Duration,
    ) -> Self {
        Self {
            command: command.into(),
            config_path: config_path.map(|p| p.display().to_string()),
            config,
            seeds,
            output: output.display().to_string(),
            tool_version: env!("CARGO_PKG_VERSION"),
            duration_s: elapsed.as_secs_f64(),
        }
    }
}
