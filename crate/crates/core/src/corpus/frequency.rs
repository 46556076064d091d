use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use super::{CorpusError, StimulusItem, TrialRow};

/// `ln(count per million + 1)`.
pub fn log_frequency_per_million(count: u64, total: u64) -> f64 {
    (count as f64 * 1e6 / total as f64).ln_1p()
}

/// Unigram counts from a `word,count` file. Lookups are case-insensitive;
/// unseen words get count 0.
#[derive(Debug, Clone, Default)]
pub struct FrequencyTable {
    counts: HashMap<String, u64>,
    total: u64,
}

impl FrequencyTable {
    pub fn from_counts<S: AsRef<str>>(counts: impl IntoIterator<Item = (S, u64)>) -> Self {
        let mut t = Self::default();
        for (w, c) in counts {
            *t.counts.entry(w.as_ref().to_lowercase()).or_default() += c;
            t.total += c;
        }
        t
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let file = std::fs::File::open(path).map_err(|e| CorpusError::io(path, e))?;
        Self::read(file).map_err(|e| e.in_file(path))
    }

    pub fn read<R: Read>(reader: R) -> Result<Self, CorpusError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers().map_err(CorpusError::csv)?.clone();
        let col = |name: &str| {
            headers.iter().position(|h| h == name).ok_or_else(|| CorpusError::MissingColumn(name.to_string()))
        };
        let (cw, cc) = (col("word")?, col("count")?);
        let mut pairs = Vec::new();
        for (r, record) in rdr.records().enumerate() {
            let record = record.map_err(CorpusError::csv)?;
            let count = record.get(cc).unwrap_or("");
            let n: u64 = count.parse().map_err(|_| CorpusError::Parse {
                row: r + 1,
                column: "count".into(),
                value: count.to_string(),
            })?;
            pairs.push((record.get(cw).unwrap_or("").to_string(), n));
        }
        let t = Self::from_counts(pairs);
        if t.total == 0 {
            return Err(CorpusError::Stimulus("frequency file has zero total count".into()));
        }
        Ok(t)
    }

    pub fn count(&self, word: &str) -> u64 {
        self.counts.get(&word.to_lowercase()).copied().unwrap_or(0)
    }

    pub fn log_frequency(&self, word: &str) -> f64 {
        log_frequency_per_million(self.count(word), self.total)
    }

    /// Sets `log_freq` on every row from the word at its stimulus position.
    pub fn populate(&self, rows: &mut [TrialRow], stimuli: &[StimulusItem]) -> Result<(), CorpusError> {
        let items: HashMap<&str, &StimulusItem> = stimuli.iter().map(|s| (s.item_id.as_str(), s)).collect();
        for row in rows {
            let word = items
                .get(row.item.as_str())
                .and_then(|s| s.words.get(row.word_index))
                .ok_or_else(|| {
                    CorpusError::Stimulus(format!("no stimulus word for item {}, word {}", row.item, row.word_index))
                })?;
            row.covariates.insert("log_freq".into(), self.log_frequency(&word.text));
        }
        Ok(())
    }
}
