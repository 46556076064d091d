use std::path::{Path, PathBuf};

use anyhow::{Context, Result, bail, ensure};
use psyeval_core::corpus::{DatasetRecipe, builtin_recipe};
use psyeval_core::engines::{EngineConfig, Family, PieceTokenizer, Tokenizer};
use psyeval_core::lmm::Criterion;
use psyeval_core::metastats::{Architecture, FdrFamily, FdrMethod, IndicatorCoding, MetaMode};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineSpec {
    pub name: String,
    pub config: EngineConfig,
    /// Weight archive; random weights seeded from the run seed and the name when absent.
    #[serde(default)]
    pub weights: Option<PathBuf>,
    /// Piece vocabulary file; byte-level tokenization when absent.
    #[serde(default)]
    pub tokenizer: Option<PathBuf>,
    /// Overrides the family-derived architecture label.
    #[serde(default)]
    pub architecture: Option<Architecture>,
    /// Parameter count used for the scale predictor; defaults to the engine's own.
    #[serde(default)]
    pub param_count: Option<u64>,
    #[serde(default)]
    pub perplexity_corpus: Option<PathBuf>,
}

impl EngineSpec {
    pub fn architecture(&self) -> Architecture {
        self.architecture.unwrap_or(match self.config.family() {
            Family::Transformer => Architecture::Pythia,
            Family::Rwkv => Architecture::Rwkv,
            Family::Mamba => Architecture::Mamba,
        })
    }

    pub fn tokenizer(&self) -> Result<PieceTokenizer> {
        match &self.tokenizer {
            Some(p) => PieceTokenizer::from_vocab_file(p).with_context(|| format!("engine {}", self.name)),
            None => Ok(PieceTokenizer::bytes_only()),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    /// Built-in recipe id; also the dataset name unless `recipe_file` says otherwise.
    #[serde(default)]
    pub recipe: Option<String>,
    #[serde(default)]
    pub recipe_file: Option<PathBuf>,
    pub trials: PathBuf,
    pub stimuli: PathBuf,
    /// `word,count` unigram file that fills `log_freq`.
    #[serde(default)]
    pub frequency: Option<PathBuf>,
}

impl DatasetSpec {
    pub fn load_recipe(&self) -> Result<DatasetRecipe> {
        match (&self.recipe, &self.recipe_file) {
            (_, Some(path)) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                Ok(DatasetRecipe::from_toml(&text).with_context(|| format!("recipe {}", path.display()))?)
            }
            (Some(id), None) => Ok(builtin_recipe(id)?),
            (None, None) => bail!("dataset entry needs `recipe` or `recipe_file`"),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSettings {
    #[serde(default)]
    pub criterion: Criterion,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default = "default_max_evals")]
    pub max_evals: usize,
}

fn default_restarts() -> usize {
    3
}

fn default_max_evals() -> usize {
    20_000
}

impl Default for FitSettings {
    fn default() -> Self {
        Self { criterion: Criterion::default(), restarts: default_restarts(), max_evals: default_max_evals() }
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaSettings {
    #[serde(default)]
    pub fdr_method: FdrMethod,
    #[serde(default)]
    pub fdr_family: FdrFamily,
    #[serde(default)]
    pub coding: IndicatorCoding,
}

fn default_modes() -> Vec<MetaMode> {
    vec![MetaMode::Scale, MetaMode::Perplexity]
}

fn default_workers() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default = "default_modes")]
    pub modes: Vec<MetaMode>,
    #[serde(default)]
    pub fit: FitSettings,
    #[serde(default)]
    pub meta: MetaSettings,
    #[serde(default)]
    pub engines: Vec<EngineSpec>,
    #[serde(default)]
    pub datasets: Vec<DatasetSpec>,
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    /// Reads a config; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: Self = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for e in &mut cfg.engines {
            for p in [&mut e.weights, &mut e.tokenizer, &mut e.perplexity_corpus].into_iter().flatten() {
                rebase(base, p);
            }
        }
        for d in &mut cfg.datasets {
            rebase(base, &mut d.trials);
            rebase(base, &mut d.stimuli);
            for p in [&mut d.recipe_file, &mut d.frequency].into_iter().flatten() {
                rebase(base, p);
            }
        }
        if let Some(out) = &mut cfg.out {
            rebase(base, out);
        }
        Ok(cfg)
    }

    /// Checks names, vocabularies and that every referenced path exists.
    pub fn validate(&self) -> Result<()> {
        ensure!(self.workers >= 1, "workers must be at least 1");
        let mut names = std::collections::BTreeSet::new();
        for e in &self.engines {
            ensure!(names.insert(e.name.as_str()), "duplicate engine name {}", e.name);
            e.config.validate().with_context(|| format!("engine {}", e.name))?;
            for p in [&e.weights, &e.tokenizer, &e.perplexity_corpus].into_iter().flatten() {
                ensure!(p.exists(), "engine {}: {} does not exist", e.name, p.display());
            }
            let tok = e.tokenizer()?;
            ensure!(
                tok.vocab_size() == e.config.vocab_size,
                "engine {}: tokenizer vocabulary {} differs from model vocabulary {}",
                e.name,
                tok.vocab_size(),
                e.config.vocab_size
            );
        }
        let mut ids = std::collections::BTreeSet::new();
        for d in &self.datasets {
            let recipe = d.load_recipe()?;
            ensure!(ids.insert(recipe.dataset_id.clone()), "duplicate dataset {}", recipe.dataset_id);
            for p in [Some(&d.trials), Some(&d.stimuli), d.frequency.as_ref(), d.recipe_file.as_ref()]
                .into_iter()
                .flatten()
            {
                ensure!(p.exists(), "dataset {}: {} does not exist", recipe.dataset_id, p.display());
            }
        }
        Ok(())
    }
}
