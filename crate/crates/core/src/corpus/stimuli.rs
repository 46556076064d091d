use std::collections::BTreeMap;
use std::io::Read;
use std::ops::Range;
use std::path::Path;

use super::{ContextPolicy, CorpusError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StimulusWord {
    pub text: String,
    /// 0-based sentence number within the item.
    pub sentence: usize,
    /// Byte offset of the word in [`StimulusItem::text`].
    pub offset: usize,
    pub critical: bool,
}

/// One stimulus: a sentence or a passage. Word indices are item-level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StimulusItem {
    pub dataset_id: String,
    pub item_id: String,
    pub words: Vec<StimulusWord>,
}

impl StimulusItem {
    /// Builds an item from sentences of whitespace-free words.
    pub fn from_sentences<S: AsRef<str>>(
        dataset_id: impl Into<String>,
        item_id: impl Into<String>,
        sentences: &[Vec<S>],
        critical: impl Fn(usize) -> bool,
    ) -> Result<Self, CorpusError> {
        let mut words = Vec::new();
        let mut offset = 0;
        for (s, sentence) in sentences.iter().enumerate() {
            for w in sentence {
                let text = w.as_ref().to_string();
                if !words.is_empty() {
                    offset += 1;
                }
                let idx = words.len();
                let len = text.len();
                words.push(StimulusWord { text, sentence: s, offset, critical: critical(idx) });
                offset += len;
            }
        }
        let item = Self { dataset_id: dataset_id.into(), item_id: item_id.into(), words };
        item.validate()?;
        Ok(item)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let err = |m: String| Err(CorpusError::Stimulus(format!("item {}: {m}", self.item_id)));
        if self.words.is_empty() {
            return err("no words".into());
        }
        for (i, w) in self.words.iter().enumerate() {
            if w.text.is_empty() || w.text.chars().any(char::is_whitespace) {
                return err(format!("word {i} ({:?}) is empty or contains whitespace", w.text));
            }
            if i > 0 {
                let prev = &self.words[i - 1];
                if w.offset != prev.offset + prev.text.len() + 1 {
                    return err(format!("word {i} offset {} does not follow word {}", w.offset, i - 1));
                }
                if w.sentence != prev.sentence && w.sentence != prev.sentence + 1 {
                    return err(format!("word {i} skips from sentence {} to {}", prev.sentence, w.sentence));
                }
            } else if w.offset != 0 || w.sentence != 0 {
                return err("first word must start sentence 0 at offset 0".into());
            }
        }
        Ok(())
    }

    /// Words joined by single spaces.
    pub fn text(&self) -> String {
        self.words.iter().map(|w| w.text.as_str()).collect::<Vec<_>>().join(" ")
    }

    pub fn sentence_count(&self) -> usize {
        self.words.last().map_or(0, |w| w.sentence + 1)
    }

    /// Word indices of sentence `s`.
    pub fn sentence_range(&self, s: usize) -> Range<usize> {
        let start = self.words.iter().position(|w| w.sentence == s).unwrap_or(self.words.len());
        let end = self.words[start..].iter().position(|w| w.sentence != s).map_or(self.words.len(), |e| start + e);
        start..end
    }

    pub fn critical_indices(&self) -> Vec<usize> {
        (0..self.words.len()).filter(|&i| self.words[i].critical).collect()
    }
}

/// Preceding text of word `word_index` under `policy`; empty for the first
/// word of a sentence (sentence policy) or of the item (passage policy).
pub fn build_context(item: &StimulusItem, word_index: usize, policy: ContextPolicy) -> String {
    assert!(word_index < item.words.len(), "word index {word_index} out of range for item {}", item.item_id);
    let start = match policy {
        ContextPolicy::SentenceSoFar => item.sentence_range(item.words[word_index].sentence).start,
        ContextPolicy::PassageSoFar => 0,
    };
    item.words[start..word_index].iter().map(|w| w.text.as_str()).collect::<Vec<_>>().join(" ")
}

pub fn load_stimuli(path: &Path, dataset_id: &str) -> Result<Vec<StimulusItem>, CorpusError> {
    let file = std::fs::File::open(path).map_err(|e| CorpusError::io(path, e))?;
    read_stimuli(file, dataset_id).map_err(|e| e.in_file(path))
}

/// Parses `item,word_index,sentence,word,critical` rows. Items come back in
/// first-appearance order; rows within an item may be in any order but must
/// cover word indices `0..n` exactly once.
pub fn read_stimuli<R: Read>(reader: R, dataset_id: &str) -> Result<Vec<StimulusItem>, CorpusError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(CorpusError::csv)?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| CorpusError::MissingColumn(name.to_string()))
    };
    let (c_item, c_word_index, c_sentence, c_word, c_critical) =
        (col("item")?, col("word_index")?, col("sentence")?, col("word")?, col("critical")?);

    let mut order: Vec<String> = Vec::new();
    let mut by_item: BTreeMap<String, BTreeMap<usize, (usize, String, bool)>> = BTreeMap::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record.map_err(CorpusError::csv)?;
        let row = r + 1;
        let cell = |i: usize| record.get(i).unwrap_or("");
        let parse_err =
            |c: &str, i: usize| CorpusError::Parse { row, column: c.to_string(), value: cell(i).to_string() };
        let item = cell(c_item).to_string();
        let word_index: usize = cell(c_word_index).parse().map_err(|_| parse_err("word_index", c_word_index))?;
        let sentence: usize = cell(c_sentence).parse().map_err(|_| parse_err("sentence", c_sentence))?;
        let critical = match cell(c_critical) {
            "1" | "true" | "TRUE" => true,
            "0" | "false" | "FALSE" | "" => false,
            _ => return Err(parse_err("critical", c_critical)),
        };
        if !by_item.contains_key(&item) {
            order.push(item.clone());
        }
        let words = by_item.entry(item.clone()).or_default();
        if words.insert(word_index, (sentence, cell(c_word).to_string(), critical)).is_some() {
            return Err(CorpusError::Stimulus(format!("item {item}: word_index {word_index} appears twice")));
        }
    }

    order
        .into_iter()
        .map(|item_id| {
            let entries = by_item.remove(&item_id).expect("item recorded");
            if let Some((pos, (&idx, _))) = entries.iter().enumerate().find(|(pos, (idx, _))| *pos != **idx) {
                return Err(CorpusError::Stimulus(format!(
                    "item {item_id}: word indices are not contiguous from 0 (expected {pos}, found {idx})"
                )));
            }
            let mut words = Vec::with_capacity(entries.len());
            let mut offset = 0;
            for (i, (_, (sentence, text, critical))) in entries.into_iter().enumerate() {
                if i > 0 {
                    offset += 1;
                }
                let len = text.len();
                words.push(StimulusWord { text, sentence, offset, critical });
                offset += len;
            }
            let item = StimulusItem { dataset_id: dataset_id.to_string(), item_id, words };
            item.validate()?;
            Ok(item)
        })
        .collect()
}
