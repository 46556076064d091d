//! Desk-scale language-model engines behind one next-token interface.
//!
//! Three families are provided: a pre-norm rotary transformer, an RWKV-style
//! time-mix/channel-mix recurrence and a Mamba-style selective scan. Every
//! engine reserves id `vocab_size - 1` as its beginning-of-sequence token.
//!
//! Transformers evaluate a sequence with causal attention over a growing
//! context. The recurrent families carry a fixed-size [`RecurrentState`] and
//! additionally expose an independent whole-sequence evaluation
//! ([`Engine::forward_parallel`]) which must agree with step-by-step
//! evaluation.

mod archive;
mod config;
mod init;
mod mamba;
pub(crate) mod ops;
mod rwkv;
mod surprisal;
mod tokenizer;
mod transformer;

use thiserror::Error;

pub use archive::{Tensor, WeightArchive, MAGIC};
pub use config::{EngineConfig, Family, FamilyParams};
pub use init::{random_archive, zero_archive};
pub use surprisal::{
    nats_to_bits, next_token_logprobs, token_surprisals, word_level_perplexity, word_surprisal,
    word_token_range, PerplexityStats,
};
pub use tokenizer::{PieceTokenizer, Token, Tokenizer};
pub use transformer::KvCache;

use mamba::Mamba;
use rwkv::Rwkv;
use transformer::Transformer;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid engine config: {0}")]
    InvalidConfig(String),
    #[error("token id {id} out of range for a vocabulary of {vocab_size}")]
    TokenOutOfRange { id: u32, vocab_size: usize },
    #[error("{0} engines carry no recurrent state")]
    NotRecurrent(Family),
    #[error("recurrent state does not belong to this engine: {0}")]
    StateMismatch(String),
    #[error("missing tensor {0}")]
    MissingTensor(String),
    #[error("tensor {name}: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("unexpected tensor {0} not used by this config")]
    UnexpectedTensor(String),
    #[error("malformed weight archive: {0}")]
    Archive(String),
    #[error("word span {word_start}..{word_end} splits token #{token_index} at {token_start}..{token_end}")]
    Misaligned {
        word_start: usize,
        word_end: usize,
        token_index: usize,
        token_start: usize,
        token_end: usize,
    },
    #[error("no token covers word span {0}..{1}")]
    UncoveredSpan(usize, usize),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Natural-log next-token probabilities over the full vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct LogProbRow(Vec<f64>);

impl LogProbRow {
    pub fn from_logits(logits: &[f64]) -> Self {
        Self(ops::log_softmax(logits))
    }

    /// Wraps values that are already log-probabilities.
    pub fn from_log_probs(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, id: u32) -> f64 {
        self.0[id as usize]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Should be zero up to rounding.
    pub fn log_sum_exp(&self) -> f64 {
        ops::log_sum_exp(&self.0)
    }
}

/// Anything that can score a token sequence.
pub trait LanguageModel: Send + Sync {
    fn vocab_size(&self) -> usize;

    fn bos_id(&self) -> u32 {
        (self.vocab_size() - 1) as u32
    }

    /// `rows[i]` is the distribution over the token following `ids[..=i]`.
    /// No BOS is added here.
    fn logprob_rows(&self, ids: &[u32]) -> Result<Vec<LogProbRow>, EngineError>;
}

/// Per-layer fixed-size state of a recurrent engine.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentState {
    family: Family,
    data: Vec<f64>,
    step_index: u64,
}

impl RecurrentState {
    pub(crate) fn new(family: Family, data: Vec<f64>) -> Self {
        Self { family, data, step_index: 0 }
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn step_index(&self) -> u64 {
        self.step_index
    }

    /// Little-endian serialization: step index followed by the state values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 8 * self.data.len());
        out.extend_from_slice(&self.step_index.to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub(crate) fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn advanced(&self, data: Vec<f64>) -> Self {
        Self { family: self.family, data, step_index: self.step_index + 1 }
    }
}

enum Model {
    Transformer(Transformer),
    Rwkv(Rwkv),
    Mamba(Mamba),
}

/// An immutable engine: configuration, its weights and the built model.
pub struct Engine {
    config: EngineConfig,
    archive: WeightArchive,
    model: Model,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("config", &self.config)
            .field("params", &self.param_count())
            .finish()
    }
}

impl Engine {
    /// Builds an engine from an archive whose manifest must equal the
    /// config's required tensor set.
    pub fn load(archive: WeightArchive, config: EngineConfig) -> Result<Self, EngineError> {
        config.validate()?;
        let required = config.required_tensors();
        for (name, shape) in &required {
            let t = archive.get(name).ok_or_else(|| EngineError::MissingTensor(name.clone()))?;
            if &t.shape != shape {
                return Err(EngineError::ShapeMismatch {
                    name: name.clone(),
                    expected: shape.clone(),
                    found: t.shape.clone(),
                });
            }
        }
        if archive.len() != required.len() {
            let known: std::collections::HashSet<&str> =
                required.iter().map(|(n, _)| n.as_str()).collect();
            if let Some((extra, _)) = archive.iter().find(|(n, _)| !known.contains(n.as_str())) {
                return Err(EngineError::UnexpectedTensor(extra.clone()));
            }
        }
        let model = match config.family() {
            Family::Transformer => Model::Transformer(Transformer::new(&config, &archive)),
            Family::Rwkv => Model::Rwkv(Rwkv::new(&config, &archive)),
            Family::Mamba => Model::Mamba(Mamba::new(&config, &archive)),
        };
        Ok(Self { config, archive, model })
    }

    /// Randomly initialized engine; identical seeds give identical weights.
    pub fn random(config: EngineConfig, seed: u64) -> Result<Self, EngineError> {
        config.validate()?;
        let archive = random_archive(&config, seed);
        Self::load(archive, config)
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn family(&self) -> Family {
        self.config.family()
    }

    pub fn archive(&self) -> &WeightArchive {
        &self.archive
    }

    pub fn param_count(&self) -> usize {
        self.archive.total_elements()
    }

    fn check_ids(&self, ids: &[u32]) -> Result<(), EngineError> {
        let vocab_size = self.config.vocab_size;
        match ids.iter().find(|&&id| id as usize >= vocab_size) {
            Some(&id) => Err(EngineError::TokenOutOfRange { id, vocab_size }),
            None => Ok(()),
        }
    }

    /// Whole-sequence evaluation. For the transformer this is causal
    /// attention over all positions at once; for the recurrent families it is
    /// the explicit (quadratic) unrolled form of the recurrence.
    pub fn forward_parallel(&self, ids: &[u32]) -> Result<Vec<LogProbRow>, EngineError> {
        self.check_ids(ids)?;
        Ok(match &self.model {
            Model::Transformer(m) => m.forward(ids),
            Model::Rwkv(m) => m.forward_parallel(ids),
            Model::Mamba(m) => m.forward_parallel(ids),
        })
    }

    /// Fresh state of a recurrent engine, before any token.
    pub fn initial_state(&self) -> Result<RecurrentState, EngineError> {
        match &self.model {
            Model::Transformer(_) => Err(EngineError::NotRecurrent(Family::Transformer)),
            Model::Rwkv(m) => Ok(m.initial_state()),
            Model::Mamba(m) => Ok(m.initial_state()),
        }
    }

    /// Consumes one token, returning the next state and the distribution
    /// over the following token. The input state is left untouched.
    pub fn step_recurrent(
        &self,
        state: &RecurrentState,
        token: u32,
    ) -> Result<(RecurrentState, LogProbRow), EngineError> {
        self.check_ids(&[token])?;
        if state.family != self.family() {
            return Err(EngineError::StateMismatch(format!(
                "state from a {} engine passed to a {} engine",
                state.family,
                self.family()
            )));
        }
        let expected = match &self.model {
            Model::Transformer(_) => return Err(EngineError::NotRecurrent(Family::Transformer)),
            Model::Rwkv(m) => m.state_len(),
            Model::Mamba(m) => m.state_len(),
        };
        if state.data.len() != expected {
            return Err(EngineError::StateMismatch(format!(
                "expected {expected} state values, found {}",
                state.data.len()
            )));
        }
        Ok(match &self.model {
            Model::Rwkv(m) => m.step(state, token),
            Model::Mamba(m) => m.step(state, token),
            Model::Transformer(_) => unreachable!(),
        })
    }

    /// Empty key/value cache for incremental transformer decoding.
    pub fn kv_cache(&self) -> Result<KvCache, EngineError> {
        match &self.model {
            Model::Transformer(m) => Ok(m.empty_cache()),
            _ => Err(EngineError::InvalidConfig(format!(
                "{} engines have no key/value cache",
                self.family()
            ))),
        }
    }

    /// Appends one token to a transformer cache and returns the next-token row.
    pub fn step_cached(&self, cache: &mut KvCache, token: u32) -> Result<LogProbRow, EngineError> {
        self.check_ids(&[token])?;
        match &self.model {
            Model::Transformer(m) => Ok(m.step_cached(cache, token)),
            _ => Err(EngineError::InvalidConfig(format!(
                "{} engines have no key/value cache",
                self.family()
            ))),
        }
    }
}

impl LanguageModel for Engine {
    fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    fn bos_id(&self) -> u32 {
        self.config.bos_id()
    }

    fn logprob_rows(&self, ids: &[u32]) -> Result<Vec<LogProbRow>, EngineError> {
        if !self.family().is_recurrent() {
            return self.forward_parallel(ids);
        }
        self.check_ids(ids)?;
        let mut state = self.initial_state()?;
        let mut rows = Vec::with_capacity(ids.len());
        for &id in ids {
            let (next, row) = self.step_recurrent(&state, id)?;
            state = next;
            rows.push(row);
        }
        Ok(rows)
    }
}

fn take(archive: &WeightArchive, name: &str) -> Vec<f32> {
    archive.get(name).expect("validated by Engine::load").data.clone()
}

/// Reads a weight archive from disk and builds the engine described by `config`.
pub fn load_weights(path: &std::path::Path, config: EngineConfig) -> Result<Engine, EngineError> {
    Engine::load(WeightArchive::read_from(path)?, config)
}

#[cfg(test)]
mod tests;
