use serde::{Deserialize, Serialize};

use super::MetaError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum FdrMethod {
    /// Benjamini–Hochberg.
    Bh,
    /// Benjamini–Yekutieli: BH times the harmonic factor `sum 1/i`.
    #[default]
    By,
}

impl std::str::FromStr for FdrMethod {
    type Err = MetaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "BH" => Ok(Self::Bh),
            "BY" => Ok(Self::By),
            _ => Err(MetaError::Config(format!("unknown FDR method {s:?} (expected BH or BY)"))),
        }
    }
}

/// Which results share one correction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FdrFamily {
    /// Every test of the run.
    #[default]
    All,
    /// All tests of one analysis mode (scale or perplexity).
    Mode,
    /// One mode within one metric group (N400 or reading time).
    Table,
    /// The four tests of a single regression.
    Dataset,
}

pub(crate) fn harmonic(m: usize) -> f64 {
    (1..=m).map(|i| 1.0 / i as f64).sum()
}

/// Step-up adjusted p-values, returned in input order.
pub fn fdr_adjust(pvals: &[f64], method: FdrMethod) -> Result<Vec<f64>, MetaError> {
    if let Some(&p) = pvals.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(MetaError::PValueOutOfRange(p));
    }
    let m = pvals.len();
    let c = match method {
        FdrMethod::Bh => 1.0,
        FdrMethod::By => harmonic(m),
    };
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| pvals[a].total_cmp(&pvals[b]));
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for (k, &i) in order.iter().enumerate().rev() {
        // m c / k >= 1, so the max only repairs rounding
        let v = (pvals[i] * m as f64 * c / (k + 1) as f64).max(pvals[i]);
        running = running.min(v);
        adjusted[i] = running.min(1.0);
    }
    Ok(adjusted)
}
