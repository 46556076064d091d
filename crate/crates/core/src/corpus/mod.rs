//! Dataset recipes, trial and stimulus loading, exclusions, context
//! construction, surprisal scoring and analysis-table assembly.

use std::path::{Path, PathBuf};

use thiserror::Error;

mod frequency;
mod recipe;
mod scoring;
mod stimuli;
mod table;
mod trials;


pub use frequency::{FrequencyTable, log_frequency_per_million};
pub use recipe::{
    BUILTIN_MANIFEST, CmpOp, ContextPolicy, DatasetRecipe, ExclusionReport, ExclusionRule, Metric, ReferenceCounts,
    ResponseTransform, SURPRISAL, apply_exclusions, builtin_recipe, builtin_recipe_ids, builtin_recipes, manifest,
};
pub use scoring::{
    SurprisalRecord, read_surprisal_records, score_item, score_item_naive, write_surprisal_records,
};
pub use stimuli::{StimulusItem, StimulusWord, build_context, load_stimuli, read_stimuli};
pub use table::{AnalysisTable, attach_surprisal, transform_response};
pub use trials::{CORE_COLUMNS, TrialRow, TrialSchema, TrialSummary, load_trials, read_trials, summarize};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed delimited text: {0}")]
    Csv(String),
    #[error("data row {row}, column {column:?}: cannot parse {value:?}")]
    Parse { row: usize, column: String, value: String },
    #[error("missing column {0:?}")]
    MissingColumn(String),
    #[error("exclusion rule {rule:?} inspects absent column {column:?}")]
    UnknownFlag { rule: String, column: String },
    #[error("no surprisal for {} (item, word_index) key(s): {}", .0.len(), format_keys(.0))]
    MissingSurprisal(Vec<(String, usize)>),
    #[error("ambiguous surprisal: several records for item {item:?}, word {word_index}")]
    DuplicateSurprisal { item: String, word_index: usize },
    #[error("row {row}: response {value} is not positive and cannot be log-transformed")]
    NonPositiveResponse { row: usize, value: f64 },
    #[error("invalid recipe: {0}")]
    Recipe(String),
    #[error("unknown recipe {0:?}")]
    UnknownRecipe(String),
    #[error("invalid stimuli: {0}")]
    Stimulus(String),
    #[error(transparent)]
    Engine(#[from] crate::engines::EngineError),
    #[error("{path}: {source}")]
    InFile { path: PathBuf, source: Box<CorpusError> },
}

fn format_keys(keys: &[(String, usize)]) -> String {
    keys.iter().map(|(i, w)| format!("({i}, {w})")).collect::<Vec<_>>().join(", ")
}

impl CorpusError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }

    pub(crate) fn csv(e: csv::Error) -> Self {
        Self::Csv(e.to_string())
    }

    pub(crate) fn in_file(self, path: &Path) -> Self {
        match self {
            Self::Io { .. } | Self::InFile { .. } => self,
            other => Self::InFile { path: path.to_path_buf(), source: Box::new(other) },
        }
    }
}
