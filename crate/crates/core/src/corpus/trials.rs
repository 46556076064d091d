use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::Path;

use super::CorpusError;

/// Columns every trial file has.
pub const CORE_COLUMNS: [&str; 4] = ["subject", "item", "word_index", "response"];

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRow {
    pub subject: String,
    pub item: String,
    pub word_index: usize,
    /// Native units: microvolts for N400, milliseconds for reading times.
    pub response: f64,
    /// Covariates and scores by column name.
    pub covariates: BTreeMap<String, f64>,
    /// Grouping factors other than subject and item.
    pub grouping: BTreeMap<String, String>,
    pub flags: BTreeMap<String, bool>,
}

impl TrialRow {
    pub fn new(subject: impl Into<String>, item: impl Into<String>, word_index: usize, response: f64) -> Self {
        Self {
            subject: subject.into(),
            item: item.into(),
            word_index,
            response,
            covariates: BTreeMap::new(),
            grouping: BTreeMap::new(),
            flags: BTreeMap::new(),
        }
    }

    /// `response` or a covariate.
    pub fn numeric(&self, name: &str) -> Option<f64> {
        if name == "response" {
            Some(self.response)
        } else {
            self.covariates.get(name).copied()
        }
    }

    pub fn factor(&self, name: &str) -> Option<&str> {
        match name {
            "subject" => Some(&self.subject),
            "item" => Some(&self.item),
            _ => self.grouping.get(name).map(String::as_str),
        }
    }
}

/// Columns beyond [`CORE_COLUMNS`] that must be present and typed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrialSchema {
    pub numeric: Vec<String>,
    pub factors: Vec<String>,
    pub flags: Vec<String>,
}

fn parse_flag(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "t" => Some(true),
        "0" | "false" | "no" | "f" => Some(false),
        _ => None,
    }
}

pub fn load_trials(path: &Path, schema: &TrialSchema) -> Result<Vec<TrialRow>, CorpusError> {
    let file = std::fs::File::open(path).map_err(|e| CorpusError::io(path, e))?;
    read_trials(file, schema).map_err(|e| e.in_file(path))
}

/// Parses trial CSV. Data rows are numbered from 1 in errors.
pub fn read_trials<R: Read>(reader: R, schema: &TrialSchema) -> Result<Vec<TrialRow>, CorpusError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(CorpusError::csv)?.clone();
    let col = |name: &str| -> Result<usize, CorpusError> {
        headers.iter().position(|h| h == name).ok_or_else(|| CorpusError::MissingColumn(name.to_string()))
    };
    let [subject, item, word_index, response] = CORE_COLUMNS.map(col);
    let (subject, item, word_index, response) = (subject?, item?, word_index?, response?);
    let numeric: Vec<(String, usize)> =
        schema.numeric.iter().map(|n| col(n).map(|i| (n.clone(), i))).collect::<Result<_, _>>()?;
    let factors: Vec<(String, usize)> =
        schema.factors.iter().map(|n| col(n).map(|i| (n.clone(), i))).collect::<Result<_, _>>()?;
    let flags: Vec<(String, usize)> =
        schema.flags.iter().map(|n| col(n).map(|i| (n.clone(), i))).collect::<Result<_, _>>()?;

    let mut rows = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record.map_err(CorpusError::csv)?;
        let row = r + 1;
        let cell = |i: usize| record.get(i).unwrap_or("");
        let parse_err = |column: &str, value: &str| CorpusError::Parse {
            row,
            column: column.to_string(),
            value: value.to_string(),
        };
        let number = |name: &str, i: usize| -> Result<f64, CorpusError> {
            let v: f64 = cell(i).parse().map_err(|_| parse_err(name, cell(i)))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(parse_err(name, cell(i)))
            }
        };
        let mut t = TrialRow::new(
            cell(subject),
            cell(item),
            cell(word_index).parse().map_err(|_| parse_err("word_index", cell(word_index)))?,
            number("response", response)?,
        );
        for (name, i) in &numeric {
            t.covariates.insert(name.clone(), number(name, *i)?);
        }
        for (name, i) in &factors {
            t.grouping.insert(name.clone(), cell(*i).to_string());
        }
        for (name, i) in &flags {
            t.flags.insert(name.clone(), parse_flag(cell(*i)).ok_or_else(|| parse_err(name, cell(*i)))?);
        }
        rows.push(t);
    }
    Ok(rows)
}

/// Trial, participant and stimulus counts of a row set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrialSummary {
    pub trials: usize,
    pub participants: usize,
    pub stimuli: usize,
}

pub fn summarize(rows: &[TrialRow]) -> TrialSummary {
    let subjects: BTreeSet<&str> = rows.iter().map(|r| r.subject.as_str()).collect();
    let stimuli: BTreeSet<(&str, usize)> = rows.iter().map(|r| (r.item.as_str(), r.word_index)).collect();
    TrialSummary { trials: rows.len(), participants: subjects.len(), stimuli: stimuli.len() }
}
