//! Per-dataset meta-regressions of mixed-model AIC on architecture and
//! scale (or perplexity), with false-discovery-rate correction.
//!
//! Each dataset gets one OLS with predictors Intercept, Mamba, RWKV and
//! either scale (`ln params`) or `-ln perplexity`. Pythia is the reference
//! architecture. The response and the continuous predictor are z-scored;
//! whether the indicators are z-scored too is [`IndicatorCoding`].

mod fdr;
mod roster;

use std::collections::{BTreeMap, HashMap};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lmm::{fit_ols, LmmError};

pub use fdr::{fdr_adjust, FdrFamily, FdrMethod};
pub use roster::canonical_roster;

/// Number of coefficients in every meta-regression.
pub const META_PREDICTORS: usize = 4;

#[derive(Debug, Error)]
pub enum MetaError {
    #[error("column {0} is constant and cannot be z-scored")]
    ConstantColumn(String),
    #[error("need at least {needed} values, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("unknown architecture {0:?} (expected pythia, rwkv or mamba)")]
    UnknownArchitecture(String),
    #[error("dataset {dataset}: no AIC for {missing:?}")]
    IncompleteRoster { dataset: String, missing: Vec<String> },
    #[error("dataset {dataset}: model {model} is not in the roster")]
    UnknownModel { dataset: String, model: String },
    #[error("dataset {dataset}: duplicate AIC for {model}")]
    DuplicateObservation { dataset: String, model: String },
    #[error("model {0} has no perplexity")]
    MissingPerplexity(String),
    #[error("p-value {0} outside [0, 1]")]
    PValueOutOfRange(f64),
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Fit(#[from] LmmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Pythia,
    Rwkv,
    Mamba,
}

impl Architecture {
    pub const ALL: [Architecture; 3] = [Architecture::Pythia, Architecture::Rwkv, Architecture::Mamba];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Pythia => "pythia",
            Self::Rwkv => "rwkv",
            Self::Mamba => "mamba",
        }
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Architecture {
    type Err = MetaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pythia" | "transformer" => Ok(Self::Pythia),
            "rwkv" => Ok(Self::Rwkv),
            "mamba" => Ok(Self::Mamba),
            _ => Err(MetaError::UnknownArchitecture(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub name: String,
    pub architecture: Architecture,
    pub param_count: u64,
    /// Word-level perplexity, when measured.
    pub perplexity: Option<f64>,
}

impl ModelMeta {
    pub fn new(name: impl Into<String>, architecture: Architecture, param_count: u64) -> Self {
        Self { name: name.into(), architecture, param_count, perplexity: None }
    }

    pub fn scale(&self) -> f64 {
        (self.param_count as f64).ln()
    }

    pub fn neg_log_ppl(&self) -> Option<f64> {
        self.perplexity.map(|p| -p.ln())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AicObservation {
    pub dataset: String,
    pub model: String,
    pub aic: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetaMode {
    #[default]
    Scale,
    Perplexity,
}

impl MetaMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Scale => "scale",
            Self::Perplexity => "perplexity",
        }
    }

    pub fn predictor_name(self) -> &'static str {
        match self {
            Self::Scale => "Scale",
            Self::Perplexity => "Perplexity",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndicatorCoding {
    /// 0/1 treatment dummies.
    #[default]
    Raw,
    /// Dummies z-scored like every other column. The intercept then equals
    /// the (zero) mean of the response.
    Zscored,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetaOptions {
    pub coding: IndicatorCoding,
    pub zscore_response: bool,
}

impl Default for MetaOptions {
    fn default() -> Self {
        Self { coding: IndicatorCoding::Raw, zscore_response: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaResultRow {
    pub dataset: String,
    /// Metric group used by the per-table correction family.
    pub group: String,
    pub mode: MetaMode,
    pub predictor: String,
    pub estimate: f64,
    pub se: f64,
    pub t: f64,
    pub df: usize,
    pub p_uncorrected: f64,
    pub p_adjusted: f64,
    pub perfect_fit: bool,
}

/// Two-sided Student-t tail probability.
pub fn t_pvalue(t: f64, df: f64) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    if t.is_infinite() {
        return 0.0;
    }
    let x = df / (df + t * t);
    statrs::function::beta::beta_reg(df / 2.0, 0.5, x).clamp(0.0, 1.0)
}

/// Standardizes with the sample (n - 1) standard deviation.
pub fn zscore(column: &[f64]) -> Result<Vec<f64>, MetaError> {
    zscore_named(column, "value")
}

fn zscore_named(column: &[f64], name: &str) -> Result<Vec<f64>, MetaError> {
    let n = column.len();
    if n < 2 {
        return Err(MetaError::TooShort { needed: 2, got: n });
    }
    let mean = column.iter().sum::<f64>() / n as f64;
    let var = column.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    if !(sd > 0.0) || !sd.is_finite() {
        return Err(MetaError::ConstantColumn(name.to_string()));
    }
    Ok(column.iter().map(|v| (v - mean) / sd).collect())
}

/// Mamba and RWKV indicator columns, Pythia as reference.
pub fn encode_architecture(rows: &[ModelMeta]) -> (Vec<f64>, Vec<f64>) {
    let ind = |a: Architecture| rows.iter().map(|m| f64::from(u8::from(m.architecture == a))).collect();
    (ind(Architecture::Mamba), ind(Architecture::Rwkv))
}

/// One regression per dataset, in order of first appearance in `obs`.
/// `p_adjusted` is left equal to `p_uncorrected`; see [`apply_fdr`].
pub fn meta_regression(
    obs: &[AicObservation],
    meta: &[ModelMeta],
    mode: MetaMode,
    group_of: &dyn Fn(&str) -> String,
    options: MetaOptions,
) -> Result<Vec<MetaResultRow>, MetaError> {
    let n = meta.len();
    if n < META_PREDICTORS + 2 {
        return Err(MetaError::TooShort { needed: META_PREDICTORS + 2, got: n });
    }
    let (mamba, rwkv) = encode_architecture(meta);
    let continuous: Vec<f64> = match mode {
        MetaMode::Scale => meta.iter().map(ModelMeta::scale).collect(),
        MetaMode::Perplexity => meta
            .iter()
            .map(|m| m.neg_log_ppl().ok_or_else(|| MetaError::MissingPerplexity(m.name.clone())))
            .collect::<Result<_, _>>()?,
    };
    let continuous = zscore_named(&continuous, mode.predictor_name())?;
    let (mamba, rwkv) = match options.coding {
        IndicatorCoding::Raw => {
            zscore_named(&mamba, "Mamba")?;
            zscore_named(&rwkv, "RWKV")?;
            (mamba, rwkv)
        }
        IndicatorCoding::Zscored => (zscore_named(&mamba, "Mamba")?, zscore_named(&rwkv, "RWKV")?),
    };
    let x = DMatrix::from_fn(n, META_PREDICTORS, |i, j| match j {
        0 => 1.0,
        1 => mamba[i],
        2 => rwkv[i],
        _ => continuous[i],
    });
    let index: HashMap<&str, usize> = meta.iter().enumerate().map(|(i, m)| (m.name.as_str(), i)).collect();

    let mut datasets: Vec<&str> = Vec::new();
    let mut by_dataset: HashMap<&str, Vec<Option<f64>>> = HashMap::new();
    for o in obs {
        let slot = by_dataset.entry(&o.dataset).or_insert_with(|| {
            datasets.push(&o.dataset);
            vec![None; n]
        });
        let i = *index
            .get(o.model.as_str())
            .ok_or_else(|| MetaError::UnknownModel { dataset: o.dataset.clone(), model: o.model.clone() })?;
        if slot[i].replace(o.aic).is_some() {
            return Err(MetaError::DuplicateObservation { dataset: o.dataset.clone(), model: o.model.clone() });
        }
    }

    let names = ["Intercept", "Mamba", "RWKV", mode.predictor_name()];
    let mut out = Vec::with_capacity(datasets.len() * META_PREDICTORS);
    for dataset in datasets {
        let slot = &by_dataset[dataset];
        let missing: Vec<String> =
            meta.iter().zip(slot).filter(|(_, v)| v.is_none()).map(|(m, _)| m.name.clone()).collect();
        if !missing.is_empty() {
            return Err(MetaError::IncompleteRoster { dataset: dataset.to_string(), missing });
        }
        let y: Vec<f64> = slot.iter().map(|v| v.expect("checked")).collect();
        let y = if options.zscore_response { zscore_named(&y, "AIC")? } else { y };
        let fit = fit_ols(&x, &y)?;
        let group = group_of(dataset);
        for (j, name) in names.iter().enumerate() {
            out.push(MetaResultRow {
                dataset: dataset.to_string(),
                group: group.clone(),
                mode,
                predictor: name.to_string(),
                estimate: fit.estimates[j],
                se: fit.std_errors[j],
                t: fit.t_values[j],
                df: fit.df,
                p_uncorrected: fit.p_values[j],
                p_adjusted: fit.p_values[j],
                perfect_fit: fit.perfect_fit,
            });
        }
    }
    Ok(out)
}

/// Fills `p_adjusted` with one correction per family.
pub fn apply_fdr(rows: &mut [MetaResultRow], method: FdrMethod, family: FdrFamily) -> Result<(), MetaError> {
    let mut families: BTreeMap<(String, String, String), Vec<usize>> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        let key = match family {
            FdrFamily::All => (String::new(), String::new(), String::new()),
            FdrFamily::Mode => (r.mode.as_str().to_string(), String::new(), String::new()),
            FdrFamily::Table => (r.mode.as_str().to_string(), r.group.clone(), String::new()),
            FdrFamily::Dataset => (r.mode.as_str().to_string(), r.group.clone(), r.dataset.clone()),
        };
        families.entry(key).or_default().push(i);
    }
    for members in families.values() {
        let p: Vec<f64> = members.iter().map(|&i| rows[i].p_uncorrected).collect();
        for (&i, adj) in members.iter().zip(fdr_adjust(&p, method)?) {
            rows[i].p_adjusted = adj;
        }
    }
    Ok(())
}
