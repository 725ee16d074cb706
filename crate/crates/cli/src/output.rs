//! File layout, hashing and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context as _;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::{data_err, internal_err, CliError, Context};

pub const TRIPS_DIR: &str = "trips";
pub const TRUTH_FILE: &str = "truth.jsonl";
pub const FRAMES_FILE: &str = "frames.jsonl";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const INCOMPLETE_FILE: &str = "incomplete.jsonl";
pub const GAPS_FILE: &str = "gaps.jsonl";
pub const GAP_FAILURES_FILE: &str = "gap_failures.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(data_err)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn sha256_str(s: &str) -> String {
    hex::encode(Sha256::digest(s.as_bytes()))
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(data_err)
}

/// Trace files under `<input>/trips`, sorted by name.
pub fn trip_files(input: &Path) -> Result<Vec<PathBuf>, CliError> {
    let dir = input.join(TRIPS_DIR);
    let entries = fs::read_dir(&dir)
        .with_context(|| format!("reading trip directory {}", dir.display()))
        .map_err(data_err)?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(data_err(anyhow::anyhow!("no trace files in {}", dir.display())));
    }
    Ok(files)
}

#[derive(Serialize)]
struct FileHash {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    tool_version: &'a str,
    /// Seconds since the Unix epoch; the only non-reproducible field.
    created_unix: u64,
    config_sha256: String,
    config: &'a lanechange::PipelineConfig,
    execution: &'a str,
    inputs: Vec<FileHash>,
    outputs: Vec<FileHash>,
}

fn hashes(paths: &[PathBuf]) -> Result<Vec<FileHash>, CliError> {
    paths
        .iter()
        .map(|p| {
            Ok(FileHash {
                path: p.display().to_string(),
                sha256: sha256_file(p)?,
            })
        })
        .collect()
}

/// Write `<out>/manifest.json` recording the effective config and the
/// hashes of every input and output.
pub fn write_manifest(
    ctx: &Context,
    command: &str,
    out: &Path,
    inputs: &[PathBuf],
    outputs: &[PathBuf],
) -> Result<(), CliError> {
    let config_text = ctx.config.to_toml_string();
    let manifest = Manifest {
        command,
        tool_version: env!("CARGO_PKG_VERSION"),
        created_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
        config_sha256: sha256_str(&config_text),
        config: &ctx.config,
        execution: if ctx.exec.is_parallel() { "parallel" } else { "sequential" },
        inputs: hashes(inputs)?,
        outputs: hashes(outputs)?,
    };
    write_json(&out.join(MANIFEST_FILE), &manifest)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(internal_err)?;
    fs::write(path, text + "\n")
        .with_context(|| format!("writing {}", path.display()))
        .map_err(data_err)
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(data_err)?;
    for r in rows {
        w.serialize(r).map_err(internal_err)?;
    }
    w.flush()
        .with_context(|| format!("writing {}", path.display()))
        .map_err(data_err)
}
