//! Synthetic workspace: stimuli, trials, frequency counts, a perplexity corpus
//! and a 14-engine config that `pipeline` can run end to end.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result, bail};
use psyeval_core::metastats::{Architecture, canonical_roster};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const WORDS: &[&str] = &[
    "the", "a", "old", "man", "woman", "child", "dog", "cat", "house", "river", "walked", "ran", "saw", "found",
    "quietly", "under", "over", "bridge", "garden", "letter", "wrote", "read", "music", "heard", "morning", "night",
    "city", "small", "bright", "cold", "window", "opened", "closed", "table", "bread", "ate", "coffee", "drank", "road",
    "long", "train", "arrived", "late", "story", "told", "friend", "teacher", "school", "book", "green", "field",
    "storm", "came", "slowly", "door", "key", "lost", "market", "sold", "apples",
];

pub const DEMO_DATASETS: &[&str] = &["brothers2021", "federmeier2007", "smith2013"];

#[derive(Debug, Clone)]
pub struct DemoSpec {
    pub seed: u64,
    pub subjects: usize,
    pub items: usize,
    pub datasets: Vec<String>,
}

fn sentence(rng: &mut ChaCha8Rng) -> Vec<&'static str> {
    let n = rng.random_range(5..=8);
    (0..n).map(|_| *WORDS.choose(rng).expect("non-empty")).collect()
}

fn engine_toml(s: &mut String, name: &str, arch: Architecture, rank: usize, params: u64) {
    let d_model = 8 + 4 * rank;
    let layers = 1 + rank / 3;
    let _ = writeln!(s, "[[engines]]\nname = \"{name}\"\nparam_count = {params}\nperplexity_corpus = \"corpus.txt\"");
    let _ = writeln!(s, "[engines.config]\nvocab_size = 257\nd_model = {d_model}\nn_layers = {layers}");
    match arch {
        Architecture::Pythia => {
            let _ = writeln!(s, "family = \"transformer\"\nn_heads = 2\nd_ff = {}", 4 * d_model);
        }
        Architecture::Rwkv => {
            let _ = writeln!(s, "family = \"rwkv\"\nd_ffn = {}", 4 * d_model);
        }
        Architecture::Mamba => {
            let _ = writeln!(s, "family = \"mamba\"\nd_state = 4");
        }
    }
    s.push('\n');
}

fn stimuli_csv(items: &[Vec<Vec<&str>>], critical: impl Fn(usize, usize, usize) -> bool) -> String {
    let mut s = String::from("item,word_index,sentence,word,critical\n");
    for (i, sentences) in items.iter().enumerate() {
        let total: usize = sentences.iter().map(Vec::len).sum();
        let mut w = 0;
        for (k, sent) in sentences.iter().enumerate() {
            for word in sent {
                let _ = writeln!(s, "i{i},{w},{k},{word},{}", u8::from(critical(i, w, total)));
                w += 1;
            }
        }
    }
    s
}

/// Writes the demo into `dir` and returns the config path.
pub fn write_demo(dir: &Path, spec: &DemoSpec) -> Result<std::path::PathBuf> {
    for d in &spec.datasets {
        if !DEMO_DATASETS.contains(&d.as_str()) {
            bail!("demo data is available for {DEMO_DATASETS:?}, not {d}");
        }
    }
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, 1.0).expect("valid normal");
    let subj_effect: Vec<f64> = (0..spec.subjects).map(|_| noise.sample(&mut rng)).collect();

    let counts: String = std::iter::once("word,count\n".to_string())
        .chain(WORDS.iter().map(|w| format!("{w},{}\n", rng.random_range(1..50_000))))
        .collect();
    std::fs::write(dir.join("counts.csv"), counts)?;
    let corpus: String = (0..40).map(|_| sentence(&mut rng).join(" ") + "\n").collect();
    std::fs::write(dir.join("corpus.txt"), corpus)?;

    let mut cfg = format!("seed = {}\nworkers = 4\nout = \"out\"\nmodes = [\"scale\", \"perplexity\"]\n\n", spec.seed);
    cfg.push_str("[fit]\ncriterion = \"REML\"\nrestarts = 1\nmax_evals = 4000\n\n[meta]\nfdr_method = \"BY\"\nfdr_family = \"all\"\n\n");

    for id in &spec.datasets {
        let passage = id == "smith2013";
        let items: Vec<Vec<Vec<&str>>> = (0..spec.items)
            .map(|_| if passage { (0..3).map(|_| sentence(&mut rng)).collect() } else { vec![sentence(&mut rng)] })
            .collect();
        let stimuli = if passage {
            stimuli_csv(&items, |_, _, _| true)
        } else {
            stimuli_csv(&items, |_, w, total| w + 1 == total)
        };
        std::fs::write(dir.join(format!("{id}_stimuli.csv")), stimuli)?;

        let mut trials = String::new();
        match id.as_str() {
            "brothers2021" => {
                trials.push_str("subject,item,word_index,response\n");
                for s in 0..spec.subjects {
                    for (i, sents) in items.iter().enumerate() {
                        let w = sents[0].len() - 1;
                        let len = sents[0][w].len() as f64;
                        let rt = 900.0 + 40.0 * len + 60.0 * subj_effect[s] + 80.0 * noise.sample(&mut rng);
                        let _ = writeln!(trials, "s{s},i{i},{w},{:.1}", rt.max(150.0));
                    }
                }
            }
            "federmeier2007" => {
                trials.push_str("subject,item,word_index,response,baseline,word_pos,ortho_nd,concreteness\n");
                for s in 0..spec.subjects {
                    for (i, sents) in items.iter().enumerate() {
                        let w = sents[0].len() - 1;
                        let baseline: f64 = noise.sample(&mut rng);
                        let amp = -2.0 + 0.5 * baseline + 0.8 * subj_effect[s] + 1.5 * noise.sample(&mut rng);
                        let _ = writeln!(
                            trials,
                            "s{s},i{i},{w},{amp:.3},{baseline:.3},{},{:.2},{:.2}",
                            w + 1,
                            rng.random_range(1.0..3.0),
                            rng.random_range(2.0..6.0)
                        );
                    }
                }
            }
            _ => {
                trials.push_str(
                    "subject,item,word_index,response,word_length,word_pos,sentence,sentence_initial,sentence_final\n",
                );
                for s in 0..spec.subjects {
                    for (i, sents) in items.iter().enumerate() {
                        let mut w = 0;
                        for (k, sent) in sents.iter().enumerate() {
                            for (j, word) in sent.iter().enumerate() {
                                let lrt = 5.8 + 0.03 * word.len() as f64 + 0.1 * subj_effect[s] + 0.3 * noise.sample(&mut rng);
                                let _ = writeln!(
                                    trials,
                                    "s{s},i{i},{w},{:.1},{},{},i{i}.{k},{},{}",
                                    lrt.exp(),
                                    word.len(),
                                    j + 1,
                                    u8::from(j == 0),
                                    u8::from(j + 1 == sent.len())
                                );
                                w += 1;
                            }
                        }
                    }
                }
            }
        }
        std::fs::write(dir.join(format!("{id}_trials.csv")), trials)?;
        let _ = writeln!(
            cfg,
            "[[datasets]]\nrecipe = \"{id}\"\ntrials = \"{id}_trials.csv\"\nstimuli = \"{id}_stimuli.csv\""
        );
        if id != "brothers2021" {
            cfg.push_str("frequency = \"counts.csv\"\n");
        }
        cfg.push('\n');
    }

    let roster = canonical_roster();
    for arch in Architecture::ALL {
        for (rank, m) in roster.iter().filter(|m| m.architecture == arch).enumerate() {
            engine_toml(&mut cfg, &m.name, arch, rank, m.param_count);
        }
    }
    let path = dir.join("config.toml");
    std::fs::write(&path, cfg)?;
    Ok(path)
}
