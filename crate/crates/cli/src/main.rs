use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Result, bail};
use clap::{Args, Parser, Subcommand};

mod config;
mod demo;
mod manifest;
mod plot;
mod stages;
mod tables;

use config::RunConfig;
use stages::{Run, StageReport};

/// Surprisal-based evaluation of language models against reading-time and
/// N400 data.
#[derive(Debug, Parser)]
#[command(name = "psyeval", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for random engine weights and fit restarts; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; overrides the config.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Word surprisal of every critical word under every engine.
    Surprisal(Common),
    /// Mixed-effects regression and AIC per (dataset, engine).
    Fit(Common),
    /// Architecture and scale/perplexity meta-regressions.
    Meta(Common),
    /// Word-level perplexity of every engine.
    Perplexity(Common),
    /// SVG figures of AIC against scale and perplexity.
    Plot(Common),
    /// All stages in order.
    Pipeline(Common),
    /// Write a synthetic workspace with a ready-to-run config.
    Demo {
        /// Directory to create.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 12)]
        subjects: usize,
        #[arg(long, default_value_t = 16)]
        items: usize,
        /// Comma-separated recipe ids.
        #[arg(long, value_delimiter = ',', default_values_t = demo::DEMO_DATASETS.iter().map(|s| s.to_string()))]
        datasets: Vec<String>,
    },
}

enum Outcome {
    Clean,
    Partial,
}

fn execute(name: &str, common: Common) -> Result<Outcome> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(w) = common.workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    let out = common.out.or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("psyeval-out"));
    let datasets: Vec<String> =
        cfg.datasets.iter().map(|d| d.load_recipe().map(|r| r.dataset_id)).collect::<Result<_>>()?;
    let (seed, workers) = (cfg.seed, cfg.workers);
    let run = Run::new(cfg, out.clone())?;
    let stages: Vec<fn(&Run) -> Result<StageReport>> = match name {
        "surprisal" => vec![stages::surprisal],
        "perplexity" => vec![stages::perplexity],
        "fit" => vec![stages::fit],
        "meta" => vec![stages::meta],
        "plot" => vec![plot::plot],
        "pipeline" => vec![stages::surprisal, stages::perplexity, stages::fit, stages::meta, plot::plot],
        other => bail!("unknown command {other}"),
    };
    let mut reports = Vec::new();
    for stage in stages {
        reports.push(stage(&run)?);
    }
    manifest::write_manifest(&out, name, &common.config, seed, workers, &datasets, &reports)?;
    let failures: usize = reports.iter().map(|r| r.failures.len()).sum();
    if failures > 0 {
        log::warn!("{failures} failure(s); see {}", out.join(tables::MANIFEST_FILE).display());
        Ok(Outcome::Partial)
    } else {
        Ok(Outcome::Clean)
    }
}

fn dispatch(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Surprisal(c) => execute("surprisal", c),
        Command::Fit(c) => execute("fit", c),
        Command::Meta(c) => execute("meta", c),
        Command::Perplexity(c) => execute("perplexity", c),
        Command::Plot(c) => execute("plot", c),
        Command::Pipeline(c) => execute("pipeline", c),
        Command::Demo { out, seed, subjects, items, datasets } => {
            let path = demo::write_demo(&out, &demo::DemoSpec { seed, subjects, items, datasets })?;
            println!("{}", path.display());
            Ok(Outcome::Clean)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(Outcome::Clean) => ExitCode::SUCCESS,
        Ok(Outcome::Partial) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
