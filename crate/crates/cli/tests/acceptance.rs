//! Acceptance criterion 11: end-to-end determinism across repeated runs and
//! worker counts. Runs as a plain binary and prints one PASS/FAIL line.

mod common;

use std::io::Write as _;
use std::time::Instant;

use common::*;

fn criterion_11() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path();
    let demo = psyeval(&["demo", "--out", root.to_str().unwrap(), "--subjects", "6", "--items", "6"]);
    if code(&demo) != 0 {
        return Err(format!("demo failed: {}", String::from_utf8_lossy(&demo.stderr)));
    }
    let config = root.join("config.toml");
    let mut runs = Vec::new();
    for (workers, label) in [("1", "w1a"), ("1", "w1b"), ("8", "w8a"), ("8", "w8b")] {
        let out = root.join(label);
        let args = ["--workers", workers, "--out", out.to_str().unwrap()];
        let res = run_config("pipeline", &config, &args);
        if !matches!(code(&res), 0 | 2) {
            return Err(format!("pipeline {label} exited {}: {}", code(&res), String::from_utf8_lossy(&res.stderr)));
        }
        let files = outputs(&out);
        if !files.iter().any(|(n, _)| n.ends_with(".svg")) || !files.iter().any(|(n, _)| n == "aic.csv") {
            return Err(format!("{label}: expected CSV and SVG outputs, got {:?}", files.iter().map(|f| &f.0).collect::<Vec<_>>()));
        }
        runs.push((label, files));
    }
    let (first, reference) = &runs[0];
    for (label, files) in &runs[1..] {
        let names = |f: &[(String, Vec<u8>)]| f.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>();
        if names(files) != names(reference) {
            return Err(format!("{label} wrote different files than {first}"));
        }
        for ((name, a), (_, b)) in files.iter().zip(reference) {
            if a != b {
                return Err(format!("{name} differs between {first} and {label}"));
            }
        }
    }
    Ok(format!("{} CSV/SVG files byte-identical across 4 runs (workers 1, 1, 8, 8)", reference.len()))
}

fn main() {
    let start = Instant::now();
    let result = criterion_11();
    let mut out = std::io::stdout().lock();
    let secs = start.elapsed().as_secs_f64();
    let ok = result.is_ok();
    let (tag, detail) = match result {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    let _ = writeln!(out, "criterion 11 {tag}: end-to-end determinism: {detail}, {secs:.1}s");
    if !ok {
        std::process::exit(1);
    }
}
