use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{CorpusError, TrialRow, TrialSchema};
use crate::lmm::{FixedSpec, RandomTerm};

/// Name of the language-model predictor in every recipe.
pub const SURPRISAL: &str = "surprisal";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "N400")]
    N400,
    #[serde(rename = "SPR-RT")]
    SprRt,
    #[serde(rename = "SPR-3W-RT")]
    Spr3wRt,
    #[serde(rename = "Maze-RT")]
    MazeRt,
    #[serde(rename = "GPD")]
    Gpd,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::N400 => "N400",
            Self::SprRt => "SPR-RT",
            Self::Spr3wRt => "SPR-3W-RT",
            Self::MazeRt => "Maze-RT",
            Self::Gpd => "GPD",
        }
    }

    /// `N400` or `RT`: the two figure/table groups.
    pub fn group(self) -> &'static str {
        match self {
            Self::N400 => "N400",
            _ => "RT",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContextPolicy {
    SentenceSoFar,
    PassageSoFar,
}

impl ContextPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::SentenceSoFar => "sentence-so-far",
            Self::PassageSoFar => "passage-so-far",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResponseTransform {
    Identity,
    NaturalLog,
}

impl ResponseTransform {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Identity => "identity",
            Self::NaturalLog => "natural-log",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    fn as_str(self) -> &'static str {
        match self {
            Self::Lt => "<",
            Self::Le => "<=",
            Self::Gt => ">",
            Self::Ge => ">=",
        }
    }

    fn holds(self, a: f64, b: f64) -> bool {
        match self {
            Self::Lt => a < b,
            Self::Le => a <= b,
            Self::Gt => a > b,
            Self::Ge => a >= b,
        }
    }
}

/// A row is excluded when its rule matches. Textual forms:
/// `response < 100`, `comprehension <= 3`, `sentence_initial`, `not fixated`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ExclusionRule {
    Numeric { column: String, op: CmpOp, threshold: f64 },
    Flag { flag: String, excluded_when: bool },
}

impl ExclusionRule {
    pub fn matches(&self, row: &TrialRow) -> Result<bool, CorpusError> {
        match self {
            Self::Numeric { column, op, threshold } => {
                let v = row.numeric(column).ok_or_else(|| CorpusError::UnknownFlag {
                    rule: self.to_string(),
                    column: column.clone(),
                })?;
                Ok(op.holds(v, *threshold))
            }
            Self::Flag { flag, excluded_when } => {
                let v = row.flags.get(flag).ok_or_else(|| CorpusError::UnknownFlag {
                    rule: self.to_string(),
                    column: flag.clone(),
                })?;
                Ok(v == excluded_when)
            }
        }
    }
}

impl fmt::Display for ExclusionRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Numeric { column, op, threshold } => write!(f, "{column} {} {threshold}", op.as_str()),
            Self::Flag { flag, excluded_when: true } => f.write_str(flag),
            Self::Flag { flag, excluded_when: false } => write!(f, "not {flag}"),
        }
    }
}

impl std::str::FromStr for ExclusionRule {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split_whitespace().collect();
        let bad = || CorpusError::Recipe(format!("cannot parse exclusion rule {s:?}"));
        let ident = |w: &str| w != "not" && !w.is_empty() && w.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
        match parts.as_slice() {
            [flag] if ident(flag) => Ok(Self::Flag { flag: flag.to_string(), excluded_when: true }),
            ["not", flag] if ident(flag) => Ok(Self::Flag { flag: flag.to_string(), excluded_when: false }),
            [column, op, value] if ident(column) => {
                let op = match *op {
                    "<" => CmpOp::Lt,
                    "<=" => CmpOp::Le,
                    ">" => CmpOp::Gt,
                    ">=" => CmpOp::Ge,
                    _ => return Err(bad()),
                };
                let threshold: f64 = value.parse().map_err(|_| bad())?;
                Ok(Self::Numeric { column: column.to_string(), op, threshold })
            }
            _ => Err(bad()),
        }
    }
}

impl TryFrom<String> for ExclusionRule {
    type Error = CorpusError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<ExclusionRule> for String {
    fn from(r: ExclusionRule) -> Self {
        r.to_string()
    }
}

/// Original dataset size, for reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceCounts {
    pub stimuli: usize,
    pub participants: usize,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecipe {
    pub dataset_id: String,
    pub metric: Metric,
    pub context_policy: ContextPolicy,
    pub response_transform: ResponseTransform,
    #[serde(default)]
    pub exclusions: Vec<ExclusionRule>,
    /// Surprisal first.
    pub fixed_effects: Vec<String>,
    pub random_effects: Vec<RandomTerm>,
    #[serde(default)]
    pub reference: Option<ReferenceCounts>,
}

const BUILTIN: [(&str, &str); 12] = [
    ("boyce2023", include_str!("../../recipes/boyce2023.toml")),
    ("brothers2021", include_str!("../../recipes/brothers2021.toml")),
    ("federmeier2007", include_str!("../../recipes/federmeier2007.toml")),
    ("futrell2021", include_str!("../../recipes/futrell2021.toml")),
    ("hubbard2019", include_str!("../../recipes/hubbard2019.toml")),
    ("kennedy2003", include_str!("../../recipes/kennedy2003.toml")),
    ("luke2018", include_str!("../../recipes/luke2018.toml")),
    ("michaelov2024", include_str!("../../recipes/michaelov2024.toml")),
    ("smith2013", include_str!("../../recipes/smith2013.toml")),
    ("szewczyk2022cbf", include_str!("../../recipes/szewczyk2022cbf.toml")),
    ("szewczyk2022pgc", include_str!("../../recipes/szewczyk2022pgc.toml")),
    ("wlotko2012", include_str!("../../recipes/wlotko2012.toml")),
];

/// Expected self-description of the built-in recipes.
pub const BUILTIN_MANIFEST: &str = include_str!("../../recipes/MANIFEST.txt");

pub fn builtin_recipe_ids() -> Vec<&'static str> {
    BUILTIN.iter().map(|(id, _)| *id).collect()
}

pub fn builtin_recipe(id: &str) -> Result<DatasetRecipe, CorpusError> {
    let (_, text) =
        BUILTIN.iter().find(|(k, _)| *k == id).ok_or_else(|| CorpusError::UnknownRecipe(id.to_string()))?;
    DatasetRecipe::from_toml(text)
}

pub fn builtin_recipes() -> Vec<DatasetRecipe> {
    BUILTIN.iter().map(|(_, t)| DatasetRecipe::from_toml(t).expect("built-in recipes are valid")).collect()
}

/// Manifest of a recipe list, one line per recipe.
pub fn manifest(recipes: &[DatasetRecipe]) -> String {
    recipes.iter().map(|r| r.describe() + "\n").collect()
}

impl DatasetRecipe {
    pub fn from_toml(text: &str) -> Result<Self, CorpusError> {
        let r: Self = toml::from_str(text).map_err(|e| CorpusError::Recipe(e.to_string()))?;
        r.validate()?;
        Ok(r)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("recipes serialize")
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let err = |m: String| Err(CorpusError::Recipe(format!("{}: {m}", self.dataset_id)));
        if self.fixed_effects.first().map(String::as_str) != Some(SURPRISAL) {
            return err("surprisal must be the first fixed effect".into());
        }
        let mut seen = BTreeSet::new();
        if let Some(d) = self.fixed_effects.iter().find(|f| !seen.insert(f.as_str())) {
            return err(format!("duplicate fixed effect {d}"));
        }
        for t in &self.random_effects {
            if let Some(s) = t.slopes.iter().find(|s| !self.fixed_effects.contains(s)) {
                return err(format!("random slope {s} for {} is not a fixed effect", t.group));
            }
        }
        if self.random_effects.is_empty() {
            return err("at least one random-effects term is required".into());
        }
        Ok(())
    }

    pub fn fixed_spec(&self) -> FixedSpec {
        FixedSpec::new(self.fixed_effects.iter().cloned())
    }

    /// `id | metric | context | transform | fixed | random | exclusions`.
    pub fn describe(&self) -> String {
        let random: Vec<String> = self.random_effects.iter().map(RandomTerm::describe).collect();
        let exclusions = if self.exclusions.is_empty() {
            "none".to_string()
        } else {
            self.exclusions.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
        };
        format!(
            "{} | {} | {} | {} | {} | {} | {}",
            self.dataset_id,
            self.metric.as_str(),
            self.context_policy.as_str(),
            self.response_transform.as_str(),
            self.fixed_effects.join(" + "),
            random.join(" + "),
            exclusions
        )
    }

    /// Columns a trial file must provide for this recipe.
    pub fn schema(&self) -> TrialSchema {
        let mut numeric: Vec<String> = self.fixed_effects.iter().filter(|f| *f != SURPRISAL).cloned().collect();
        let mut factors = Vec::new();
        let mut flags = Vec::new();
        for t in &self.random_effects {
            if !["subject", "item"].contains(&t.group.as_str()) && !factors.contains(&t.group) {
                factors.push(t.group.clone());
            }
        }
        for rule in &self.exclusions {
            match rule {
                ExclusionRule::Numeric { column, .. } => {
                    if column != "response" && !numeric.contains(column) {
                        numeric.push(column.clone());
                    }
                }
                ExclusionRule::Flag { flag, .. } => {
                    if !flags.contains(flag) {
                        flags.push(flag.clone());
                    }
                }
            }
        }
        TrialSchema { numeric, factors, flags }
    }

    /// AIC parameter count for a design with every fixed effect kept:
    /// intercept and fixed effects, theta entries, residual variance.
    pub fn aic_parameter_count(&self) -> usize {
        1 + self.fixed_effects.len() + self.random_effects.iter().map(RandomTerm::n_theta).sum::<usize>() + 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExclusionReport {
    pub input_rows: usize,
    pub retained_rows: usize,
    /// Rows matched by each rule (a row may match several).
    pub per_rule: Vec<(String, usize)>,
}

/// Rows matching no exclusion rule, in input order.
pub fn apply_exclusions(
    rows: &[TrialRow],
    recipe: &DatasetRecipe,
) -> Result<(Vec<TrialRow>, ExclusionReport), CorpusError> {
    let mut counts = vec![0usize; recipe.exclusions.len()];
    let mut kept = Vec::with_capacity(rows.len());
    for row in rows {
        let mut excluded = false;
        for (rule, count) in recipe.exclusions.iter().zip(&mut counts) {
            if rule.matches(row)? {
                *count += 1;
                excluded = true;
            }
        }
        if !excluded {
            kept.push(row.clone());
        }
    }
    let report = ExclusionReport {
        input_rows: rows.len(),
        retained_rows: kept.len(),
        per_rule: recipe.exclusions.iter().map(ToString::to_string).zip(counts).collect(),
    };
    Ok((kept, report))
}
