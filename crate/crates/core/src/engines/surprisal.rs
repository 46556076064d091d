//! Token- and word-level surprisal, and word-level perplexity.
//!
//! All quantities are in nats; [`nats_to_bits`] is the only conversion.

use std::ops::Range;

use super::{EngineError, LanguageModel, LogProbRow, Token, Tokenizer};

pub fn nats_to_bits(nats: f64) -> f64 {
    nats / std::f64::consts::LN_2
}

/// Distribution over the token following `prefix`, with BOS prepended.
pub fn next_token_logprobs<M: LanguageModel + ?Sized>(
    model: &M,
    prefix: &[Token],
) -> Result<LogProbRow, EngineError> {
    let ids: Vec<u32> = std::iter::once(model.bos_id()).chain(prefix.iter().map(|t| t.id)).collect();
    let mut rows = model.logprob_rows(&ids)?;
    Ok(rows.pop().expect("BOS guarantees one row"))
}

/// `s_t = -log p(token_t | BOS, tokens_<t)` for every token, from a single
/// pass over the sequence.
pub fn token_surprisals<M: LanguageModel + ?Sized>(
    model: &M,
    tokens: &[Token],
) -> Result<Vec<f64>, EngineError> {
    if tokens.is_empty() {
        return Err(EngineError::EmptyInput("token sequence"));
    }
    let vocab_size = model.vocab_size();
    if let Some(t) = tokens.iter().find(|t| t.id as usize >= vocab_size) {
        return Err(EngineError::TokenOutOfRange { id: t.id, vocab_size });
    }
    let inputs: Vec<u32> = std::iter::once(model.bos_id())
        .chain(tokens[..tokens.len() - 1].iter().map(|t| t.id))
        .collect();
    let rows = model.logprob_rows(&inputs)?;
    Ok(rows.iter().zip(tokens).map(|(row, t)| -row.get(t.id)).collect())
}

/// Indices of the contiguous run of tokens tiling `word_span`.
pub fn word_token_range(word_span: Range<usize>, tokens: &[Token]) -> Result<Range<usize>, EngineError> {
    let mut first = None;
    let mut last = 0;
    for (i, t) in tokens.iter().enumerate() {
        let overlaps = t.span.start < word_span.end && t.span.end > word_span.start;
        if !overlaps {
            continue;
        }
        if t.span.start < word_span.start || t.span.end > word_span.end {
            return Err(EngineError::Misaligned {
                word_start: word_span.start,
                word_end: word_span.end,
                token_index: i,
                token_start: t.span.start,
                token_end: t.span.end,
            });
        }
        first.get_or_insert(i);
        last = i;
    }
    match first {
        Some(f) => Ok(f..last + 1),
        None => Err(EngineError::UncoveredSpan(word_span.start, word_span.end)),
    }
}

/// Sum of the surprisals of the tokens making up the word.
pub fn word_surprisal(
    token_surprisals: &[f64],
    word_span: Range<usize>,
    tokens: &[Token],
) -> Result<f64, EngineError> {
    let range = word_token_range(word_span, tokens)?;
    Ok(token_surprisals[range].iter().sum())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerplexityStats {
    pub words: usize,
    pub tokens: usize,
    /// Total token negative log-likelihood in nats.
    pub nll: f64,
}

impl PerplexityStats {
    pub fn perplexity(&self) -> f64 {
        (self.nll / self.words as f64).exp()
    }

    pub fn merge(self, other: Self) -> Self {
        Self { words: self.words + other.words, tokens: self.tokens + other.tokens, nll: self.nll + other.nll }
    }
}

/// `exp(total token surprisal / number of whitespace-separated words)`.
pub fn word_level_perplexity<M, T>(model: &M, tokenizer: &T, text: &str) -> Result<PerplexityStats, EngineError>
where
    M: LanguageModel + ?Sized,
    T: Tokenizer + ?Sized,
{
    let words = text.split_whitespace().count();
    if words == 0 {
        return Err(EngineError::EmptyInput("text has no words"));
    }
    let tokens = tokenizer.tokenize(text.as_bytes());
    let nll = token_surprisals(model, &tokens)?.iter().sum();
    Ok(PerplexityStats { words, tokens: tokens.len(), nll })
}
