use std::collections::BTreeMap;
use std::path::Path;

use anyhow::Result;
use serde::Serialize;

use crate::stages::{Failure, StageReport, failed_datasets, sha256_file};
use crate::tables::MANIFEST_FILE;

#[derive(Debug, Serialize)]
struct OutputFile {
    file: String,
    sha256: String,
    bytes: u64,
}

#[derive(Debug, Serialize)]
struct StageEntry<'a> {
    name: &'a str,
    seconds: f64,
    outputs: Vec<OutputFile>,
    failures: &'a [Failure],
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    version: &'static str,
    command: &'a str,
    config_sha256: String,
    seed: u64,
    workers: usize,
    status: &'static str,
    stages: Vec<StageEntry<'a>>,
    datasets: BTreeMap<String, &'static str>,
}

/// Writes `manifest.json` next to the stage outputs.
pub fn write_manifest(
    out: &Path,
    command: &str,
    config_path: &Path,
    seed: u64,
    workers: usize,
    datasets: &[String],
    reports: &[StageReport],
) -> Result<()> {
    let failed = failed_datasets(reports);
    let mut stages = Vec::new();
    for r in reports {
        let mut outputs = Vec::new();
        for p in &r.outputs {
            outputs.push(OutputFile {
                file: p.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
                sha256: sha256_file(p)?,
                bytes: std::fs::metadata(p)?.len(),
            });
        }
        stages.push(StageEntry { name: r.name, seconds: r.seconds, outputs, failures: &r.failures });
    }
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        command,
        config_sha256: sha256_file(config_path)?,
        seed,
        workers,
        status: if reports.iter().any(|r| !r.failures.is_empty()) { "partial" } else { "ok" },
        stages,
        datasets: datasets.iter().map(|d| (d.clone(), if failed.contains(d) { "failed" } else { "ok" })).collect(),
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(out.join(MANIFEST_FILE), text + "\n")?;
    Ok(())
}
