use std::collections::{BTreeMap, BTreeSet};

use super::{CorpusError, DatasetRecipe, ResponseTransform, SURPRISAL, SurprisalRecord, TrialRow};
use crate::lmm::{LmmError, ModelFrame};

/// Trials joined with one engine's surprisal.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisTable {
    pub dataset_id: String,
    pub engine: String,
    /// Content hash of the trial input, set by the caller.
    pub dataset_hash: String,
    pub response_transform: Option<ResponseTransform>,
    pub rows: Vec<TrialRow>,
}

/// Joins `rows` with the records of `engine` for `dataset_id` on
/// `(item, word_index)`. Every row must find exactly one record.
pub fn attach_surprisal(
    rows: Vec<TrialRow>,
    records: &[SurprisalRecord],
    dataset_id: &str,
    engine: &str,
) -> Result<AnalysisTable, CorpusError> {
    let mut lookup: BTreeMap<(&str, usize), f64> = BTreeMap::new();
    for r in records.iter().filter(|r| r.engine == engine && r.dataset == dataset_id) {
        if lookup.insert((r.item.as_str(), r.word_index), r.surprisal).is_some() {
            return Err(CorpusError::DuplicateSurprisal { item: r.item.clone(), word_index: r.word_index });
        }
    }
    let missing: BTreeSet<(String, usize)> = rows
        .iter()
        .filter(|row| !lookup.contains_key(&(row.item.as_str(), row.word_index)))
        .map(|row| (row.item.clone(), row.word_index))
        .collect();
    if !missing.is_empty() {
        return Err(CorpusError::MissingSurprisal(missing.into_iter().collect()));
    }
    let rows = rows
        .into_iter()
        .map(|mut row| {
            let s = lookup[&(row.item.as_str(), row.word_index)];
            row.covariates.insert(SURPRISAL.to_string(), s);
            row
        })
        .collect();
    Ok(AnalysisTable {
        dataset_id: dataset_id.to_string(),
        engine: engine.to_string(),
        dataset_hash: String::new(),
        response_transform: None,
        rows,
    })
}

/// Applies the recipe's response transform. A table is transformed once.
pub fn transform_response(mut table: AnalysisTable, recipe: &DatasetRecipe) -> Result<AnalysisTable, CorpusError> {
    if table.response_transform.is_some() {
        return Err(CorpusError::Recipe(format!("table {} is already transformed", table.dataset_id)));
    }
    if recipe.response_transform == ResponseTransform::NaturalLog {
        for (i, row) in table.rows.iter_mut().enumerate() {
            if !(row.response > 0.0) {
                return Err(CorpusError::NonPositiveResponse { row: i + 1, value: row.response });
            }
            row.response = row.response.ln();
        }
    }
    table.response_transform = Some(recipe.response_transform);
    Ok(table)
}

impl AnalysisTable {
    pub fn with_dataset_hash(mut self, hash: impl Into<String>) -> Self {
        self.dataset_hash = hash.into();
        self
    }

    /// Model frame with the recipe's fixed effects and grouping factors, and
    /// the response vector.
    pub fn model_inputs(&self, recipe: &DatasetRecipe) -> Result<(ModelFrame, Vec<f64>), CorpusError> {
        let mut frame = ModelFrame::new();
        let lmm = |e: LmmError| CorpusError::Recipe(format!("{}: {e}", recipe.dataset_id));
        for name in &recipe.fixed_effects {
            let values = self
                .rows
                .iter()
                .map(|r| r.numeric(name).ok_or_else(|| CorpusError::MissingColumn(name.clone())))
                .collect::<Result<Vec<f64>, _>>()?;
            frame.add_numeric(name.clone(), values).map_err(lmm)?;
        }
        let mut groups: Vec<&str> = Vec::new();
        for t in &recipe.random_effects {
            if !groups.contains(&t.group.as_str()) {
                groups.push(&t.group);
            }
        }
        for g in groups {
            let values = self
                .rows
                .iter()
                .map(|r| r.factor(g).map(str::to_string).ok_or_else(|| CorpusError::MissingColumn(g.to_string())))
                .collect::<Result<Vec<String>, _>>()?;
            frame.add_factor(g, values).map_err(lmm)?;
        }
        Ok((frame, self.rows.iter().map(|r| r.response).collect()))
    }
}
