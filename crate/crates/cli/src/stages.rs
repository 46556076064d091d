use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result, anyhow};
use psyeval_core::corpus::{
    DatasetRecipe, FrequencyTable, StimulusItem, SurprisalRecord, TrialRow, apply_exclusions, attach_surprisal,
    load_stimuli, load_trials, read_surprisal_records, score_item, transform_response, write_surprisal_records,
};
use psyeval_core::engines::{Engine, PerplexityStats, PieceTokenizer, load_weights, word_level_perplexity};
use psyeval_core::lmm::{FitOptions, build_design, fit_lmm};
use psyeval_core::metastats::{AicObservation, MetaMode, MetaOptions, ModelMeta, apply_fdr, meta_regression};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{EngineSpec, RunConfig};
use crate::tables::*;

#[derive(Debug, Clone, Serialize)]
pub struct Failure {
    pub dataset: Option<String>,
    pub engine: Option<String>,
    pub message: String,
}

impl Failure {
    fn new(dataset: Option<&str>, engine: Option<&str>, message: impl Into<String>) -> Self {
        Self { dataset: dataset.map(str::to_string), engine: engine.map(str::to_string), message: message.into() }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StageReport {
    pub name: &'static str,
    pub outputs: Vec<PathBuf>,
    pub failures: Vec<Failure>,
    pub seconds: f64,
}

pub struct Run {
    pub cfg: RunConfig,
    pub out: PathBuf,
    pool: rayon::ThreadPool,
}

struct LoadedEngine<'a> {
    spec: &'a EngineSpec,
    engine: Engine,
    tokenizer: PieceTokenizer,
}

/// Per-engine weight seed: depends on the run seed and the engine name only.
pub fn engine_seed(run_seed: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(run_seed.to_le_bytes());
    h.update(name.as_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl Run {
    pub fn new(cfg: RunConfig, out: PathBuf) -> Result<Self> {
        std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build()?;
        Ok(Self { cfg, out, pool })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn load_engines(&self) -> Result<Vec<LoadedEngine<'_>>> {
        self.cfg
            .engines
            .iter()
            .map(|spec| {
                let engine = match &spec.weights {
                    Some(p) => load_weights(p, spec.config.clone()),
                    None => Engine::random(spec.config.clone(), engine_seed(self.cfg.seed, &spec.name)),
                }
                .with_context(|| format!("engine {}", spec.name))?;
                Ok(LoadedEngine { spec, engine, tokenizer: spec.tokenizer()? })
            })
            .collect()
    }

    fn param_count(&self, spec: &EngineSpec, engine: &Engine) -> u64 {
        spec.param_count.unwrap_or(engine.param_count() as u64)
    }

    fn recipes(&self) -> Result<Vec<DatasetRecipe>> {
        self.cfg.datasets.iter().map(|d| d.load_recipe()).collect()
    }
}

fn finish(name: &'static str, start: Instant, outputs: Vec<PathBuf>, failures: Vec<Failure>) -> StageReport {
    for f in &failures {
        log::warn!(
            "{name}: {}{}{}",
            f.dataset.as_deref().map(|d| format!("dataset {d}: ")).unwrap_or_default(),
            f.engine.as_deref().map(|e| format!("engine {e}: ")).unwrap_or_default(),
            f.message
        );
    }
    StageReport { name, outputs, failures, seconds: start.elapsed().as_secs_f64() }
}

/// Word surprisal of every critical stimulus word under every engine.
pub fn surprisal(run: &Run) -> Result<StageReport> {
    let start = Instant::now();
    let engines = run.load_engines()?;
    let mut failures = Vec::new();
    let mut datasets: Vec<(DatasetRecipe, Vec<StimulusItem>)> = Vec::new();
    for (spec, recipe) in run.cfg.datasets.iter().zip(run.recipes()?) {
        match load_stimuli(&spec.stimuli, &recipe.dataset_id) {
            Ok(items) => datasets.push((recipe, items)),
            Err(e) => failures.push(Failure::new(Some(&recipe.dataset_id), None, e.to_string())),
        }
    }
    let tasks: Vec<(usize, usize, usize)> = datasets
        .iter()
        .enumerate()
        .flat_map(|(d, (_, items))| {
            (0..engines.len()).flat_map(move |e| (0..items.len()).map(move |i| (d, e, i)))
        })
        .collect();
    let results: Vec<_> = run.pool.install(|| {
        tasks
            .par_iter()
            .map(|&(d, e, i)| {
                let (recipe, items) = &datasets[d];
                let le = &engines[e];
                score_item(&le.engine, &le.tokenizer, &items[i], recipe.context_policy, &le.spec.name)
            })
            .collect()
    });

    let mut bad: BTreeMap<(usize, usize), (usize, String)> = BTreeMap::new();
    for (&(d, e, _), r) in tasks.iter().zip(&results) {
        if let Err(err) = r {
            bad.entry((d, e)).or_insert((0, err.to_string())).0 += 1;
        }
    }
    for (&(d, e), (count, first)) in &bad {
        failures.push(Failure::new(
            Some(&datasets[d].0.dataset_id),
            Some(&engines[e].spec.name),
            format!("{count} item(s) failed to score; first error: {first}"),
        ));
    }
    let records: Vec<SurprisalRecord> = tasks
        .iter()
        .zip(results)
        .filter(|(&(d, e, _), _)| !bad.contains_key(&(d, e)))
        .flat_map(|(_, r)| r.expect("failed pairs filtered"))
        .collect();
    let path = run.path(SURPRISAL_FILE);
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    write_surprisal_records(std::io::BufWriter::new(file), &records)?;
    log::info!("surprisal: {} records", records.len());
    Ok(finish("surprisal", start, vec![path], failures))
}

fn corpus_lines(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut lines = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            lines.push(line.trim().to_string());
        }
    }
    Ok(lines)
}

/// Word-level perplexity of each engine on its corpus; lines are scored
/// independently and pooled.
pub fn perplexity(run: &Run) -> Result<StageReport> {
    let start = Instant::now();
    let engines = run.load_engines()?;
    let mut failures = Vec::new();
    let mut corpora: Vec<Option<Vec<String>>> = Vec::new();
    for le in &engines {
        corpora.push(match &le.spec.perplexity_corpus {
            None => {
                log::warn!("engine {} has no perplexity corpus", le.spec.name);
                None
            }
            Some(p) => match corpus_lines(p) {
                Ok(lines) if lines.is_empty() => {
                    failures.push(Failure::new(None, Some(&le.spec.name), "perplexity corpus is empty"));
                    None
                }
                Ok(lines) => Some(lines),
                Err(e) => {
                    failures.push(Failure::new(None, Some(&le.spec.name), format!("{e:#}")));
                    None
                }
            },
        });
    }
    let tasks: Vec<(usize, usize)> = corpora
        .iter()
        .enumerate()
        .flat_map(|(e, c)| (0..c.as_ref().map_or(0, Vec::len)).map(move |l| (e, l)))
        .collect();
    let results: Vec<_> = run.pool.install(|| {
        tasks
            .par_iter()
            .map(|&(e, l)| {
                let line = &corpora[e].as_ref().expect("task from corpus")[l];
                word_level_perplexity(&engines[e].engine, &engines[e].tokenizer, line)
            })
            .collect()
    });
    let mut pooled: Vec<Option<Result<PerplexityStats, String>>> = vec![None; engines.len()];
    for (&(e, _), r) in tasks.iter().zip(results) {
        let slot = &mut pooled[e];
        *slot = Some(match (slot.take(), r) {
            (Some(Err(m)), _) => Err(m),
            (_, Err(err)) => Err(err.to_string()),
            (None, Ok(s)) => Ok(s),
            (Some(Ok(a)), Ok(s)) => Ok(a.merge(s)),
        });
    }
    let mut rows = Vec::new();
    for (le, p) in engines.iter().zip(pooled) {
        match p {
            Some(Ok(s)) => rows.push(PerplexityRow {
                engine: le.spec.name.clone(),
                architecture: le.spec.architecture().to_string(),
                param_count: run.param_count(le.spec, &le.engine),
                words: s.words,
                tokens: s.tokens,
                nll: s.nll,
                perplexity: s.perplexity(),
            }),
            Some(Err(m)) => failures.push(Failure::new(None, Some(&le.spec.name), m)),
            None => {}
        }
    }
    let path = run.path(PERPLEXITY_FILE);
    write_table(&path, PERPLEXITY_HEADER, &rows)?;
    Ok(finish("perplexity", start, vec![path], failures))
}

struct PreparedDataset {
    recipe: DatasetRecipe,
    rows: Vec<TrialRow>,
    hash: String,
}

fn prepare_dataset(spec: &crate::config::DatasetSpec, recipe: DatasetRecipe) -> Result<(PreparedDataset, Vec<ExclusionRow>)> {
    let mut schema = recipe.schema();
    if spec.frequency.is_some() {
        schema.numeric.retain(|c| c != "log_freq");
    }
    let mut rows = load_trials(&spec.trials, &schema)?;
    if let Some(freq) = &spec.frequency {
        let table = FrequencyTable::load(freq)?;
        let stimuli = load_stimuli(&spec.stimuli, &recipe.dataset_id)?;
        table.populate(&mut rows, &stimuli)?;
    }
    let (kept, report) = apply_exclusions(&rows, &recipe)?;
    log::info!(
        "dataset {}: {} of {} rows retained",
        recipe.dataset_id,
        report.retained_rows,
        report.input_rows
    );
    let exclusions = report
        .per_rule
        .iter()
        .map(|(rule, n)| ExclusionRow {
            dataset: recipe.dataset_id.clone(),
            rule: rule.clone(),
            excluded: *n,
            input_rows: report.input_rows,
            retained_rows: report.retained_rows,
        })
        .collect();
    let hash = sha256_file(&spec.trials)?;
    Ok((PreparedDataset { recipe, rows: kept, hash }, exclusions))
}

fn fit_one(
    ds: &PreparedDataset,
    records: &[SurprisalRecord],
    engine: &str,
    options: FitOptions,
) -> Result<psyeval_core::lmm::LmmFit> {
    let recipe = &ds.recipe;
    let table = attach_surprisal(ds.rows.clone(), records, &recipe.dataset_id, engine)?.with_dataset_hash(&ds.hash);
    let table = transform_response(table, recipe)?;
    let (frame, y) = table.model_inputs(recipe)?;
    let design = build_design(&frame, &recipe.fixed_spec(), &recipe.random_effects)?;
    Ok(fit_lmm(&design, &y, options)?)
}

/// One mixed-effects regression per (dataset, engine).
pub fn fit(run: &Run) -> Result<StageReport> {
    let start = Instant::now();
    let spath = run.path(SURPRISAL_FILE);
    let file = File::open(&spath).with_context(|| format!("{} is missing; run the surprisal stage first", spath.display()))?;
    let records = read_surprisal_records(BufReader::new(file)).with_context(|| format!("parsing {}", spath.display()))?;
    let mut failures = Vec::new();
    let mut datasets = Vec::new();
    let mut exclusions = Vec::new();
    for (spec, recipe) in run.cfg.datasets.iter().zip(run.recipes()?) {
        let id = recipe.dataset_id.clone();
        match prepare_dataset(spec, recipe) {
            Ok((ds, ex)) => {
                datasets.push(ds);
                exclusions.extend(ex);
            }
            Err(e) => failures.push(Failure::new(Some(&id), None, format!("{e:#}"))),
        }
    }
    let options = FitOptions {
        criterion: run.cfg.fit.criterion,
        seed: run.cfg.seed,
        restarts: run.cfg.fit.restarts,
        max_evals: run.cfg.fit.max_evals,
        ..FitOptions::default()
    };
    let engines = &run.cfg.engines;
    let tasks: Vec<(usize, usize)> =
        (0..datasets.len()).flat_map(|d| (0..engines.len()).map(move |e| (d, e))).collect();
    let results: Vec<_> = run.pool.install(|| {
        tasks.par_iter().map(|&(d, e)| fit_one(&datasets[d], &records, &engines[e].name, options)).collect()
    });
    let declared: HashMap<&str, u64> = param_counts(run)?;
    let mut rows = Vec::with_capacity(tasks.len());
    for (&(d, e), r) in tasks.iter().zip(results) {
        let ds = &datasets[d];
        let spec = &engines[e];
        let mut row = AicRow {
            dataset: ds.recipe.dataset_id.clone(),
            group: ds.recipe.metric.group().to_string(),
            engine: spec.name.clone(),
            architecture: spec.architecture().to_string(),
            param_count: declared[spec.name.as_str()],
            n: None,
            k: None,
            loglik: None,
            aic: None,
            surprisal_estimate: None,
            surprisal_se: None,
            converged: None,
            singular: None,
            status: "ok".into(),
            message: String::new(),
        };
        match r {
            Ok(f) => {
                let j = f.fixed_names.iter().position(|n| n == psyeval_core::corpus::SURPRISAL);
                row.n = Some(f.n);
                row.k = Some(f.k);
                row.loglik = Some(f.loglik);
                row.aic = Some(f.aic);
                row.surprisal_estimate = j.map(|j| f.beta[j]);
                row.surprisal_se = j.map(|j| f.beta_se[j]);
                row.converged = Some(f.converged);
                row.singular = Some(f.singular);
                if !f.converged {
                    row.message = "optimizer did not converge".into();
                    failures.push(Failure::new(Some(&row.dataset), Some(&row.engine), "fit did not converge"));
                }
            }
            Err(err) => {
                row.status = "error".into();
                row.message = format!("{err:#}");
                failures.push(Failure::new(Some(&row.dataset), Some(&row.engine), row.message.clone()));
            }
        }
        rows.push(row);
    }
    let aic_path = run.path(AIC_FILE);
    write_table(&aic_path, AIC_HEADER, &rows)?;
    let ex_path = run.path(EXCLUSIONS_FILE);
    write_table(&ex_path, EXCLUSION_HEADER, &exclusions)?;
    Ok(finish("fit", start, vec![aic_path, ex_path], failures))
}

/// Parameter counts for the scale predictor without building the engines
/// when every engine declares one.
fn param_counts(run: &Run) -> Result<HashMap<&str, u64>> {
    if run.cfg.engines.iter().all(|e| e.param_count.is_some()) {
        return Ok(run.cfg.engines.iter().map(|e| (e.name.as_str(), e.param_count.expect("checked"))).collect());
    }
    let engines = run.load_engines()?;
    Ok(engines.iter().map(|le| (le.spec.name.as_str(), run.param_count(le.spec, &le.engine))).collect())
}

/// Architecture/scale and architecture/perplexity meta-regressions per dataset.
pub fn meta(run: &Run) -> Result<StageReport> {
    let start = Instant::now();
    let aic: Vec<AicRow> = read_table(&run.path(AIC_FILE)).context("run the fit stage first")?;
    let mut failures = Vec::new();
    let mut perplexity: HashMap<String, f64> = HashMap::new();
    if run.cfg.modes.contains(&MetaMode::Perplexity) {
        let path = run.path(PERPLEXITY_FILE);
        let rows: Vec<PerplexityRow> = read_table(&path).context("run the perplexity stage first")?;
        perplexity.extend(rows.into_iter().map(|r| (r.engine, r.perplexity)));
    }

    let declared = param_counts(run)?;
    let roster: Vec<ModelMeta> = run
        .cfg
        .engines
        .iter()
        .map(|e| ModelMeta {
            name: e.name.clone(),
            architecture: e.architecture(),
            param_count: declared[e.name.as_str()],
            perplexity: perplexity.get(&e.name).copied(),
        })
        .collect();
    let mut order: Vec<&str> = Vec::new();
    let mut groups: HashMap<&str, &str> = HashMap::new();
    let mut obs: HashMap<&str, Vec<AicObservation>> = HashMap::new();
    for r in &aic {
        if !groups.contains_key(r.dataset.as_str()) {
            order.push(&r.dataset);
            groups.insert(&r.dataset, &r.group);
        }
        if let (Some(a), "ok") = (r.aic, r.status.as_str()) {
            obs.entry(&r.dataset).or_default().push(AicObservation {
                dataset: r.dataset.clone(),
                model: r.engine.clone(),
                aic: a,
            });
        }
    }
    let group_of = |d: &str| groups.get(d).map_or_else(String::new, |g| g.to_string());
    let options = MetaOptions { coding: run.cfg.meta.coding, ..MetaOptions::default() };

    let mut all = Vec::new();
    let mut modes_run = Vec::new();
    for &mode in &run.cfg.modes {
        if mode == MetaMode::Perplexity {
            let missing: Vec<&str> =
                roster.iter().filter(|m| m.perplexity.is_none()).map(|m| m.name.as_str()).collect();
            if !missing.is_empty() {
                failures.push(Failure::new(None, None, format!("perplexity mode skipped: no perplexity for {missing:?}")));
                continue;
            }
        }
        modes_run.push(mode);
        for d in &order {
            let o = obs.get(d).map_or(&[][..], Vec::as_slice);
            match meta_regression(o, &roster, mode, &group_of, options) {
                Ok(rows) if rows.is_empty() => {
                    failures.push(Failure::new(Some(d), None, format!("{} mode: no successful fits", mode.as_str())))
                }
                Ok(rows) => all.extend(rows),
                Err(e) => failures.push(Failure::new(Some(d), None, format!("{} mode: {e}", mode.as_str()))),
            }
        }
    }
    apply_fdr(&mut all, run.cfg.meta.fdr_method, run.cfg.meta.fdr_family).map_err(|e| anyhow!(e))?;

    let mut outputs = Vec::new();
    for mode in modes_run {
        let rows: Vec<MetaRow> = all
            .iter()
            .filter(|r| r.mode == mode)
            .map(|r| MetaRow {
                dataset: r.dataset.clone(),
                predictor: r.predictor.clone(),
                estimate: r.estimate,
                se: r.se,
                t: r.t,
                df: r.df,
                p_uncorrected: r.p_uncorrected,
                p_adjusted: r.p_adjusted,
            })
            .collect();
        let path = run.path(&meta_file(mode.as_str()));
        write_table(&path, META_HEADER, &rows)?;
        outputs.push(path);
    }
    Ok(finish("meta", start, outputs, failures))
}

/// Datasets named by any failure.
pub fn failed_datasets(reports: &[StageReport]) -> BTreeSet<String> {
    reports.iter().flat_map(|r| &r.failures).filter_map(|f| f.dataset.clone()).collect()
}
