mod common;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use common::*;
use psyeval_core::engines::{zero_archive, EngineConfig};
use psyeval_core::metastats::Architecture;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn trials_for(dir: &std::path::Path, items: usize, subjects: usize) {
    let mut s = String::from("subject,item,word_index,response\n");
    for sub in 0..subjects {
        for i in 0..items {
            let last = SENTENCES[i].split(' ').count() - 1;
            let _ = writeln!(s, "s{sub},i{i},{last},{}", 400 + 17 * ((sub * 7 + i * 3) % 11));
        }
    }
    std::fs::write(dir.join("trials.csv"), s).unwrap();
}

/// `[engines.config]` body as it appears in the config, parsed back.
fn parsed_config(engine: &Engine<'_>) -> EngineConfig {
    let text = engine.toml();
    let body = text.split("[engines.config]\n").nth(1).unwrap();
    toml::from_str(body).unwrap()
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&psyeval(&["--help"])), 0);
    assert_eq!(code(&psyeval(&["--version"])), 0);
    assert_eq!(code(&psyeval(&["pipeline", "--help"])), 0);
}

#[test]
fn usage_and_config_errors_exit_one() {
    assert_eq!(code(&psyeval(&["pipeline", "--bogus"])), 1);
    assert_eq!(code(&psyeval(&["fit", "--config", "/nonexistent/config.toml"])), 1);

    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &[Engine::random("a", "rwkv"), Engine::random("a", "mamba")], false, "");
    let out = run_config("surprisal", &cfg, &[]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("duplicate engine name"));

    let bad_vocab = Engine { vocab: 300, ..Engine::random("v", "rwkv") };
    let cfg = write_config(dir.path(), &[bad_vocab], false, "");
    assert_eq!(code(&run_config("surprisal", &cfg, &[])), 1);

    let cfg = write_config(dir.path(), &[Engine::random("a", "rwkv")], true, "");
    let out = run_config("surprisal", &cfg, &[]);
    assert_eq!(code(&out), 1, "missing stimuli file must be rejected up front");
}

#[test]
fn surprisal_rows_are_engines_times_critical_words() {
    let dir = tempfile::tempdir().unwrap();
    write_stimuli(&dir.path().join("stimuli.csv"), &SENTENCES[..3]);
    trials_for(dir.path(), 3, 2);
    let cfg = write_config(dir.path(), &[Engine::random("t", "transformer"), Engine::random("m", "mamba")], true, "");
    let out = run_config("surprisal", &cfg, &[]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_csv(&dir.path().join("out/surprisal.csv"));
    assert_eq!(rows.len() - 1, 6);
    let engine = column(&rows, "engine");
    for name in ["t", "m"] {
        assert_eq!(rows[1..].iter().filter(|r| r[engine] == name).count(), 3);
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "ok");
    assert_eq!(manifest["stages"][0]["outputs"][0]["file"], "surprisal.csv");
}

#[test]
fn zero_weights_give_ln_v_per_byte_token() {
    let dir = tempfile::tempdir().unwrap();
    write_stimuli(&dir.path().join("stimuli.csv"), &SENTENCES[..2]);
    trials_for(dir.path(), 2, 2);
    let mut engine = Engine::random("u", "rwkv");
    engine.extra = "weights = \"zero.bin\"".into();
    zero_archive(&parsed_config(&engine)).write_to(&dir.path().join("zero.bin")).unwrap();
    let cfg = write_config(dir.path(), &[engine], true, "");
    assert_eq!(code(&run_config("surprisal", &cfg, &[])), 0);
    let rows = read_csv(&dir.path().join("out/surprisal.csv"));
    let (word, s, k) = (column(&rows, "word"), column(&rows, "surprisal"), column(&rows, "n_tokens"));
    for r in &rows[1..] {
        // the word's leading space is its own byte token
        let tokens = r[word].len() + 1;
        assert_eq!(r[k].parse::<usize>().unwrap(), tokens);
        let v: f64 = r[s].parse().unwrap();
        assert!((v - tokens as f64 * 257f64.ln()).abs() < 1e-9, "{v}");
    }
}

#[test]
fn perplexity_of_zero_weights_equals_vocabulary() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = "alpha beta gamma delta\nbeta gamma alpha\n\ndelta delta beta alpha gamma\n";
    std::fs::write(dir.path().join("corpus.txt"), corpus).unwrap();
    let words = ["alpha", "beta", "gamma", "delta"];
    let pieces: String = words.iter().flat_map(|w| [w.to_string(), format!(" {w}")]).map(|p| p + "\n").collect();
    std::fs::write(dir.path().join("vocab.txt"), pieces).unwrap();
    let vocab = 8 + 256 + 1;
    let mut engine = Engine { vocab, ..Engine::random("z", "transformer") };
    engine.extra = "weights = \"zero.bin\"\ntokenizer = \"vocab.txt\"\nperplexity_corpus = \"corpus.txt\"".into();
    zero_archive(&parsed_config(&engine)).write_to(&dir.path().join("zero.bin")).unwrap();
    let cfg = write_config(dir.path(), &[engine], false, "");
    let out = run_config("perplexity", &cfg, &[]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_csv(&dir.path().join("out/perplexity.csv"));
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1][column(&rows, "words")], "12");
    assert_eq!(rows[1][column(&rows, "tokens")], "12");
    let ppl: f64 = rows[1][column(&rows, "perplexity")].parse().unwrap();
    assert!((ppl - vocab as f64).abs() < 1e-9, "{ppl}");
}

#[test]
fn engine_order_does_not_change_any_row() {
    let dir = tempfile::tempdir().unwrap();
    write_stimuli(&dir.path().join("stimuli.csv"), &SENTENCES[..4]);
    trials_for(dir.path(), 4, 2);
    let mut seen = Vec::new();
    for order in [["a", "b", "c"], ["c", "a", "b"]] {
        let families = |n: &str| match n {
            "a" => "transformer",
            "b" => "rwkv",
            _ => "mamba",
        };
        let engines: Vec<Engine> = order.iter().map(|n| Engine::random(n, families(n))).collect();
        let cfg = write_config(dir.path(), &engines, true, "");
        assert_eq!(code(&run_config("surprisal", &cfg, &[])), 0);
        let mut rows = read_csv(&dir.path().join("out/surprisal.csv"));
        rows[1..].sort();
        seen.push(rows);
    }
    assert_eq!(seen[0], seen[1]);
}

#[test]
fn no_datasets_gives_empty_outputs_and_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &[Engine::random("a", "rwkv"), Engine::random("b", "mamba")], false, "");
    let out = run_config("pipeline", &cfg, &[]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read_csv(&dir.path().join("out/aic.csv")).len(), 1);
    let svg = std::fs::read_to_string(dir.path().join("out/aic_scale_rt.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("no datasets"));
}

#[test]
fn stage_failures_exit_two_and_mark_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("empty.txt"), "\n\n").unwrap();
    let mut engine = Engine::random("a", "rwkv");
    engine.extra = "perplexity_corpus = \"empty.txt\"".into();
    let cfg = write_config(dir.path(), &[engine], false, "");
    assert_eq!(code(&run_config("perplexity", &cfg, &[])), 2);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "partial");
    assert_eq!(manifest["stages"][0]["failures"][0]["engine"], "a");
}

#[test]
fn fourteen_engine_meta_regression_has_ten_residual_df() {
    let dir = tempfile::tempdir().unwrap();
    let roster = psyeval_core::metastats::canonical_roster();
    let mut cfg = String::from("modes = [\"scale\"]\nout = \"out\"\n\n");
    let mut aic = String::from(
        "dataset,group,engine,architecture,param_count,n,k,loglik,aic,surprisal_estimate,surprisal_se,converged,singular,status,message\n",
    );
    for m in &roster {
        let family = match m.architecture {
            Architecture::Pythia => "transformer\"\nn_heads = 2\nd_ff = 8",
            Architecture::Rwkv => "rwkv\"\nd_ffn = 8",
            Architecture::Mamba => "mamba\"\nd_state = 2",
        };
        let _ = write!(
            cfg,
            "[[engines]]\nname = \"{}\"\nparam_count = {}\n[engines.config]\nvocab_size = 257\nd_model = 4\nn_layers = 1\nfamily = \"{family}\n\n",
            m.name, m.param_count
        );
        for (d, g) in [("dsa", "N400"), ("dsb", "RT")] {
            let a = -2.0 * (m.param_count as f64).ln() + if d == "dsb" { 0.1 * m.name.len() as f64 } else { 0.0 };
            let _ = writeln!(
                aic,
                "{d},{g},{},{},{},100,5,0,{a},1,0.1,true,false,ok,",
                m.name,
                m.architecture.as_str(),
                m.param_count
            );
        }
    }
    std::fs::write(dir.path().join("config.toml"), cfg).unwrap();
    std::fs::create_dir(dir.path().join("out")).unwrap();
    std::fs::write(dir.path().join("out/aic.csv"), aic).unwrap();
    let out = run_config("meta", &dir.path().join("config.toml"), &[]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_csv(&dir.path().join("out/meta_scale.csv"));
    assert_eq!(rows[0], ["Dataset", "Predictor", "Estimate", "SE", "t", "df", "p_uncorrected", "p_adjusted"]);
    assert_eq!(rows.len() - 1, 8);
    let df = column(&rows, "df");
    assert!(rows[1..].iter().all(|r| r[df] == "10"));
    let scale = rows.iter().find(|r| r[0] == "dsa" && r[1] == "Scale").unwrap();
    assert!((scale[2].parse::<f64>().unwrap() + 1.0).abs() < 1e-10);
}

#[test]
fn planted_surprisal_slope_is_recovered_through_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let sentences: Vec<String> = (0..24)
        .map(|i| {
            let words = ["river", "garden", "letter", "coffee", "bridge", "morning", "story", "window"];
            format!("{} {}", SENTENCES[i % SENTENCES.len()], words[i % words.len()])
        })
        .collect();
    let refs: Vec<&str> = sentences.iter().map(String::as_str).collect();
    write_stimuli(&dir.path().join("stimuli.csv"), &refs);
    std::fs::write(dir.path().join("trials.csv"), "subject,item,word_index,response\n").unwrap();
    let cfg = write_config(dir.path(), &[Engine::random("lm", "transformer")], true, "");
    assert_eq!(code(&run_config("surprisal", &cfg, &[])), 0);

    let rows = read_csv(&dir.path().join("out/surprisal.csv"));
    let (item, s) = (column(&rows, "item"), column(&rows, "surprisal"));
    let by_item: BTreeMap<String, f64> = rows[1..].iter().map(|r| (r[item].clone(), r[s].parse().unwrap())).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let noise = Normal::new(0.0, 8.0).unwrap();
    let mut trials = String::from("subject,item,word_index,response\n");
    for sub in 0..20 {
        let offset: f64 = rng.random_range(-30.0..30.0);
        for (i, text) in refs.iter().enumerate() {
            let w = text.split(' ').count() - 1;
            let rt = 300.0 + offset + 2.0 * by_item[&format!("i{i}")] + noise.sample(&mut rng);
            let _ = writeln!(trials, "s{sub},i{i},{w},{rt:.3}");
        }
    }
    std::fs::write(dir.path().join("trials.csv"), trials).unwrap();
    let out = run_config("fit", &cfg, &[]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let aic = read_csv(&dir.path().join("out/aic.csv"));
    let beta: f64 = aic[1][column(&aic, "surprisal_estimate")].parse().unwrap();
    assert!((beta - 2.0).abs() < 0.2, "{beta}");
    assert_eq!(aic[1][column(&aic, "n")], "480");
}
