//! Row types of the delimited output tables.

use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const SURPRISAL_FILE: &str = "surprisal.csv";
pub const PERPLEXITY_FILE: &str = "perplexity.csv";
pub const AIC_FILE: &str = "aic.csv";
pub const EXCLUSIONS_FILE: &str = "exclusions.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn meta_file(mode: &str) -> String {
    format!("meta_{mode}.csv")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerplexityRow {
    pub engine: String,
    pub architecture: String,
    pub param_count: u64,
    pub words: usize,
    pub tokens: usize,
    pub nll: f64,
    pub perplexity: f64,
}

/// One mixed-effects fit. Numeric cells are empty when `status` is not `ok`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AicRow {
    pub dataset: String,
    pub group: String,
    pub engine: String,
    pub architecture: String,
    pub param_count: u64,
    pub n: Option<usize>,
    pub k: Option<usize>,
    pub loglik: Option<f64>,
    pub aic: Option<f64>,
    pub surprisal_estimate: Option<f64>,
    pub surprisal_se: Option<f64>,
    pub converged: Option<bool>,
    pub singular: Option<bool>,
    pub status: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExclusionRow {
    pub dataset: String,
    pub rule: String,
    pub excluded: usize,
    pub input_rows: usize,
    pub retained_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaRow {
    #[serde(rename = "Dataset")]
    pub dataset: String,
    #[serde(rename = "Predictor")]
    pub predictor: String,
    #[serde(rename = "Estimate")]
    pub estimate: f64,
    #[serde(rename = "SE")]
    pub se: f64,
    pub t: f64,
    pub df: usize,
    pub p_uncorrected: f64,
    pub p_adjusted: f64,
}

/// Writes `rows` with a header; `header` is used when there are no rows.
pub fn write_table<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    if rows.is_empty() {
        w.write_record(header)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_table<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let rows = r.deserialize().collect::<Result<Vec<T>, _>>().with_context(|| format!("parsing {}", path.display()))?;
    Ok(rows)
}

pub const PERPLEXITY_HEADER: &[&str] = &["engine", "architecture", "param_count", "words", "tokens", "nll", "perplexity"];
pub const AIC_HEADER: &[&str] = &[
    "dataset",
    "group",
    "engine",
    "architecture",
    "param_count",
    "n",
    "k",
    "loglik",
    "aic",
    "surprisal_estimate",
    "surprisal_se",
    "converged",
    "singular",
    "status",
    "message",
];
pub const EXCLUSION_HEADER: &[&str] = &["dataset", "rule", "excluded", "input_rows", "retained_rows"];
pub const META_HEADER: &[&str] = &["Dataset", "Predictor", "Estimate", "SE", "t", "df", "p_uncorrected", "p_adjusted"];
