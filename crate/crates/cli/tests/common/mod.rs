#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn psyeval(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_psyeval"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

pub fn run_config(cmd: &str, config: &Path, extra: &[&str]) -> Output {
    let mut args = vec![cmd, "--config", config.to_str().expect("utf-8 path")];
    args.extend_from_slice(extra);
    psyeval(&args)
}

/// Stimuli with one sentence per item; the last word is critical.
pub fn write_stimuli(path: &Path, sentences: &[&str]) {
    let mut s = String::from("item,word_index,sentence,word,critical\n");
    for (i, sent) in sentences.iter().enumerate() {
        let words: Vec<&str> = sent.split(' ').collect();
        for (w, word) in words.iter().enumerate() {
            let _ = writeln!(s, "i{i},{w},0,{word},{}", u8::from(w + 1 == words.len()));
        }
    }
    std::fs::write(path, s).expect("write stimuli");
}

pub const SENTENCES: &[&str] = &[
    "the old man walked to the river",
    "a small dog ran under the bridge",
    "she read the letter in the garden",
    "they drank coffee every cold morning",
    "the train arrived late at night",
    "my friend told a long story",
];

pub struct Engine<'a> {
    pub name: &'a str,
    pub family: &'a str,
    pub vocab: usize,
    pub extra: String,
}

impl<'a> Engine<'a> {
    pub fn random(name: &'a str, family: &'a str) -> Self {
        Self { name, family, vocab: 257, extra: String::new() }
    }

    pub fn toml(&self) -> String {
        let family = match self.family {
            "transformer" => "family = \"transformer\"\nn_heads = 2\nd_ff = 32".to_string(),
            "rwkv" => "family = \"rwkv\"\nd_ffn = 32".to_string(),
            _ => "family = \"mamba\"\nd_state = 4".to_string(),
        };
        format!(
            "[[engines]]\nname = \"{}\"\n{}\n[engines.config]\nvocab_size = {}\nd_model = 16\nn_layers = 1\n{family}\n\n",
            self.name, self.extra, self.vocab
        )
    }
}

/// Config with the brothers2021 recipe (surprisal only, identity response).
pub fn write_config(dir: &Path, engines: &[Engine<'_>], with_dataset: bool, extra: &str) -> PathBuf {
    let mut cfg = format!("seed = 5\nworkers = 1\nout = \"out\"\nmodes = [\"scale\"]\n{extra}\n");
    if with_dataset {
        cfg.push_str("[[datasets]]\nrecipe = \"brothers2021\"\ntrials = \"trials.csv\"\nstimuli = \"stimuli.csv\"\n\n");
    }
    for e in engines {
        cfg.push_str(&e.toml());
    }
    let path = dir.join("config.toml");
    std::fs::write(&path, cfg).expect("write config");
    path
}

pub fn read_csv(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).expect("csv opens");
    let mut rows = vec![r.headers().expect("header").iter().map(str::to_string).collect()];
    rows.extend(r.records().map(|rec| rec.expect("record").iter().map(str::to_string).collect()));
    rows
}

pub fn column(rows: &[Vec<String>], name: &str) -> usize {
    rows[0].iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"))
}

/// Every CSV and SVG file directly under `dir`, with contents.
pub fn outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .expect("output dir")
        .map(|e| e.expect("entry").path())
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("csv" | "svg")))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).expect("read")))
        .collect();
    files.sort();
    files
}
