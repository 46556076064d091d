use std::io::{Read, Write};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{ContextPolicy, CorpusError, StimulusItem, build_context};
use crate::engines::{LanguageModel, Tokenizer, token_surprisals, word_token_range};

/// Surprisal of one stimulus word under one engine, in nats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurprisalRecord {
    pub dataset: String,
    pub item: String,
    pub word_index: usize,
    pub word: String,
    pub engine: String,
    pub surprisal: f64,
    pub n_tokens: usize,
    /// Space-separated token ids of the word.
    pub token_ids: String,
    /// Space-separated per-token surprisals.
    pub token_surprisals: String,
}

impl SurprisalRecord {
    fn new(item: &StimulusItem, word_index: usize, engine: &str, ids: &[u32], surprisals: &[f64]) -> Self {
        Self {
            dataset: item.dataset_id.clone(),
            item: item.item_id.clone(),
            word_index,
            word: item.words[word_index].text.clone(),
            engine: engine.to_string(),
            surprisal: surprisals.iter().sum(),
            n_tokens: ids.len(),
            token_ids: ids.iter().map(u32::to_string).collect::<Vec<_>>().join(" "),
            token_surprisals: surprisals.iter().map(f64::to_string).collect::<Vec<_>>().join(" "),
        }
    }
}

/// Word spans inside the text of `words[range]` joined by spaces. Every word
/// but the first owns its leading space.
fn unit_spans(item: &StimulusItem, range: Range<usize>) -> Vec<Range<usize>> {
    let base = item.words[range.start].offset;
    range
        .clone()
        .map(|i| {
            let w = &item.words[i];
            let start = w.offset - base;
            let end = start + w.text.len();
            if i == range.start { start..end } else { start - 1..end }
        })
        .collect()
}

fn unit_text(item: &StimulusItem, range: Range<usize>) -> String {
    item.words[range].iter().map(|w| w.text.as_str()).collect::<Vec<_>>().join(" ")
}

/// Scores the critical words of `item`. The model runs once per sentence
/// under the sentence policy and once per item under the passage policy.
pub fn score_item<M, T>(
    model: &M,
    tokenizer: &T,
    item: &StimulusItem,
    policy: ContextPolicy,
    engine: &str,
) -> Result<Vec<SurprisalRecord>, CorpusError>
where
    M: LanguageModel + ?Sized,
    T: Tokenizer + ?Sized,
{
    let units: Vec<Range<usize>> = match policy {
        ContextPolicy::SentenceSoFar => (0..item.sentence_count()).map(|s| item.sentence_range(s)).collect(),
        ContextPolicy::PassageSoFar => vec![0..item.words.len()],
    };
    let mut out = Vec::new();
    for unit in units {
        if !item.words[unit.clone()].iter().any(|w| w.critical) {
            continue;
        }
        let text = unit_text(item, unit.clone());
        let tokens = tokenizer.tokenize(text.as_bytes());
        let surprisals = token_surprisals(model, &tokens)?;
        for (i, span) in unit.clone().zip(unit_spans(item, unit)) {
            if !item.words[i].critical {
                continue;
            }
            let r = word_token_range(span, &tokens)?;
            let ids: Vec<u32> = tokens[r.clone()].iter().map(|t| t.id).collect();
            out.push(SurprisalRecord::new(item, i, engine, &ids, &surprisals[r]));
        }
    }
    Ok(out)
}

/// Reference route: one model call per critical word on
/// `build_context(..) + " " + word`.
pub fn score_item_naive<M, T>(
    model: &M,
    tokenizer: &T,
    item: &StimulusItem,
    policy: ContextPolicy,
    engine: &str,
) -> Result<Vec<SurprisalRecord>, CorpusError>
where
    M: LanguageModel + ?Sized,
    T: Tokenizer + ?Sized,
{
    let mut out = Vec::new();
    for i in item.critical_indices() {
        let context = build_context(item, i, policy);
        let word = &item.words[i].text;
        let (text, span) = if context.is_empty() {
            (word.clone(), 0..word.len())
        } else {
            let text = format!("{context} {word}");
            let span = context.len()..text.len();
            (text, span)
        };
        let tokens = tokenizer.tokenize(text.as_bytes());
        let surprisals = token_surprisals(model, &tokens)?;
        let r = word_token_range(span, &tokens)?;
        let ids: Vec<u32> = tokens[r.clone()].iter().map(|t| t.id).collect();
        out.push(SurprisalRecord::new(item, i, engine, &ids, &surprisals[r]));
    }
    Ok(out)
}

pub fn write_surprisal_records<W: Write>(writer: W, records: &[SurprisalRecord]) -> Result<(), CorpusError> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        w.serialize(r).map_err(CorpusError::csv)?;
    }
    if records.is_empty() {
        w.write_record([
            "dataset",
            "item",
            "word_index",
            "word",
            "engine",
            "surprisal",
            "n_tokens",
            "token_ids",
            "token_surprisals",
        ])
        .map_err(CorpusError::csv)?;
    }
    w.flush().map_err(|e| CorpusError::Csv(e.to_string()))
}

pub fn read_surprisal_records<R: Read>(reader: R) -> Result<Vec<SurprisalRecord>, CorpusError> {
    let mut rdr = csv::Reader::from_reader(reader);
    rdr.deserialize().map(|r| r.map_err(CorpusError::csv)).collect()
}
