use super::*;

fn configs(vocab: usize) -> Vec<EngineConfig> {
    vec![
        EngineConfig::transformer(vocab, 16, 2, 2),
        EngineConfig::rwkv(vocab, 16, 2),
        EngineConfig::mamba(vocab, 16, 2, 4),
    ]
}

fn seq(len: usize, vocab: usize, seed: u64) -> Vec<u32> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(0..vocab as u32)).collect()
}

fn toks(ids: &[u32]) -> Vec<Token> {
    ids.iter().enumerate().map(|(i, &id)| Token { id, span: i..i + 1 }).collect()
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * b.abs().max(1.0)
}

#[test]
fn zero_weights_give_uniform_rows() {
    for cfg in configs(16) {
        let engine = Engine::load(zero_archive(&cfg), cfg.clone()).unwrap();
        let row = next_token_logprobs(&engine, &toks(&[3, 1, 4])).unwrap();
        for &v in row.values() {
            assert!((v + (16f64).ln()).abs() < 1e-12, "{:?}: {v}", cfg.family());
        }
        let s = token_surprisals(&engine, &toks(&[0, 5, 9, 2])).unwrap();
        assert!(s.iter().all(|v| (v - (16f64).ln()).abs() < 1e-12));
    }
}

#[test]
fn rows_are_normalized_for_random_weights() {
    for cfg in configs(16) {
        let engine = Engine::random(cfg, 3).unwrap();
        for row in engine.logprob_rows(&seq(12, 16, 1)).unwrap() {
            // direct summation, independent of the log-sum-exp helper
            let total: f64 = row.values().iter().map(|v| v.exp()).sum();
            assert!((total.ln()).abs() < 1e-6);
            assert_eq!(row.len(), 16);
        }
    }
}

#[test]
fn full_pass_rows_match_truncated_prefix_calls() {
    for cfg in configs(16) {
        let engine = Engine::random(cfg, 5).unwrap();
        let ids = seq(10, 15, 2);
        let full = engine.logprob_rows(&ids).unwrap();
        for t in 0..ids.len() {
            let short = engine.logprob_rows(&ids[..=t]).unwrap();
            for (a, b) in full[t].values().iter().zip(short[t].values()) {
                assert!((a - b).abs() < 1e-5);
            }
        }
    }
}

#[test]
fn transformer_output_depends_on_early_tokens() {
    let engine = Engine::random(EngineConfig::transformer(16, 16, 1, 2), 9).unwrap();
    let a = engine.logprob_rows(&[1, 2, 3]).unwrap();
    let b = engine.logprob_rows(&[7, 2, 3]).unwrap();
    assert!(a[2].values().iter().zip(b[2].values()).any(|(x, y)| (x - y).abs() > 1e-6));
}

#[test]
fn stepwise_matches_parallel_for_recurrent_families() {
    for cfg in [EngineConfig::rwkv(16, 16, 2), EngineConfig::mamba(16, 16, 2, 4)] {
        let engine = Engine::random(cfg, 21).unwrap();
        let ids = seq(32, 16, 4);
        let parallel = engine.forward_parallel(&ids).unwrap();
        let stepped = engine.logprob_rows(&ids).unwrap();
        for (p, s) in parallel.iter().zip(&stepped) {
            for (a, b) in p.values().iter().zip(s.values()) {
                assert!(close(*b, *a, 1e-5), "{a} vs {b}");
            }
        }
    }
}

#[test]
fn stepping_is_deterministic_and_pure() {
    let engine = Engine::random(EngineConfig::mamba(16, 16, 2, 4), 1).unwrap();
    let s0 = engine.initial_state().unwrap();
    let (s1, r1) = engine.step_recurrent(&s0, 4).unwrap();
    let (s1b, r1b) = engine.step_recurrent(&s0, 4).unwrap();
    assert_eq!(s1.to_bytes(), s1b.to_bytes());
    assert_eq!(r1, r1b);
    assert_eq!(s0.step_index(), 0);
    assert_eq!(s1.step_index(), 1);
}

#[test]
fn recurrent_state_size_is_constant() {
    for cfg in [EngineConfig::rwkv(16, 8, 2), EngineConfig::mamba(16, 8, 2, 4)] {
        let engine = Engine::random(cfg, 2).unwrap();
        let mut state = engine.initial_state().unwrap();
        let mut sizes = Vec::new();
        for (i, id) in seq(100, 16, 3).into_iter().enumerate() {
            state = engine.step_recurrent(&state, id).unwrap().0;
            if i == 0 || i == 99 {
                sizes.push(state.to_bytes().len());
            }
        }
        assert_eq!(sizes[0], sizes[1]);
        assert_eq!(state.step_index(), 100);
    }
}

#[test]
fn transformer_cache_grows_linearly_and_matches_full_pass() {
    let engine = Engine::random(EngineConfig::transformer(16, 16, 2, 2), 8).unwrap();
    assert!(matches!(engine.initial_state(), Err(EngineError::NotRecurrent(Family::Transformer))));
    let ids = seq(12, 16, 9);
    let full = engine.forward_parallel(&ids).unwrap();
    let mut cache = engine.kv_cache().unwrap();
    let per_token = 2 * 2 * 16 * 8;
    for (t, &id) in ids.iter().enumerate() {
        let row = engine.step_cached(&mut cache, id).unwrap();
        assert_eq!(cache.byte_size(), (t + 1) * per_token);
        for (a, b) in row.values().iter().zip(full[t].values()) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn family_and_range_errors() {
    let tf = Engine::random(EngineConfig::transformer(16, 16, 1, 2), 0).unwrap();
    let rw = Engine::random(EngineConfig::rwkv(16, 8, 1), 0).unwrap();
    let mb = Engine::random(EngineConfig::mamba(16, 8, 1, 2), 0).unwrap();
    let rw_state = rw.initial_state().unwrap();
    assert!(matches!(tf.step_recurrent(&rw_state, 1), Err(EngineError::StateMismatch(_))));
    assert!(matches!(mb.step_recurrent(&rw_state, 1), Err(EngineError::StateMismatch(_))));
    assert!(matches!(rw.step_recurrent(&rw_state, 16), Err(EngineError::TokenOutOfRange { id: 16, .. })));
    assert!(matches!(
        token_surprisals(&tf, &toks(&[1, 99])),
        Err(EngineError::TokenOutOfRange { id: 99, .. })
    ));
    assert!(matches!(token_surprisals(&tf, &[]), Err(EngineError::EmptyInput(_))));
}

#[test]
fn load_reports_missing_and_misshaped_tensors() {
    let cfg = EngineConfig::rwkv(16, 8, 1);
    let mut archive = random_archive(&cfg, 1);
    archive.insert("blocks.0.att.key.weight", Tensor::zeros(&[8, 9]));
    match Engine::load(archive, cfg.clone()) {
        Err(EngineError::ShapeMismatch { name, .. }) => assert_eq!(name, "blocks.0.att.key.weight"),
        other => panic!("expected shape mismatch, got {other:?}"),
    }

    let mut archive = WeightArchive::new();
    for (name, t) in random_archive(&cfg, 1).iter().filter(|(n, _)| n.as_str() != "ln_out.bias") {
        archive.insert(name.clone(), t.clone());
    }
    assert!(matches!(Engine::load(archive, cfg.clone()), Err(EngineError::MissingTensor(n)) if n == "ln_out.bias"));

    let mut archive = random_archive(&cfg, 1);
    archive.insert("stray", Tensor::zeros(&[1]));
    assert!(matches!(Engine::load(archive, cfg), Err(EngineError::UnexpectedTensor(n)) if n == "stray"));
}

#[test]
fn save_load_roundtrip_preserves_logits() {
    let dir = tempfile::tempdir().unwrap();
    for cfg in configs(16) {
        let engine = Engine::random(cfg.clone(), 77).unwrap();
        assert_eq!(engine.param_count(), cfg.param_count());
        let path = dir.path().join(format!("{}.sbwt", cfg.family()));
        engine.archive().write_to(&path).unwrap();
        let back = load_weights(&path, cfg).unwrap();
        assert_eq!(back.archive().manifest(), engine.archive().manifest());
        let prompt = [3, 1, 4, 1, 5];
        assert_eq!(engine.logprob_rows(&prompt).unwrap(), back.logprob_rows(&prompt).unwrap());
    }
}

#[test]
fn surprisals_are_gathered_from_next_token_rows() {
    for cfg in configs(16) {
        let engine = Engine::random(cfg, 13).unwrap();
        let tokens = toks(&seq(8, 15, 6));
        let s = token_surprisals(&engine, &tokens).unwrap();
        for t in 0..tokens.len() {
            let row = next_token_logprobs(&engine, &tokens[..t]).unwrap();
            assert!((s[t] + row.get(tokens[t].id)).abs() < 1e-9);
        }
        // chain rule: total equals -log p(sequence) computed by prefix products
        let total: f64 = s.iter().sum();
        let chained: f64 =
            (0..tokens.len()).map(|t| next_token_logprobs(&engine, &tokens[..t]).unwrap().get(tokens[t].id)).sum();
        assert!((total + chained).abs() < 1e-9);
        assert!(s.iter().all(|&v| v >= 0.0));
    }
}

#[test]
fn word_surprisal_sums_its_tokens() {
    let tokens = toks(&[1, 2, 3, 4]);
    let s = [0.5, 1.5, 2.5, 3.0];
    assert_eq!(word_surprisal(&s, 0..1, &tokens).unwrap(), 0.5);
    assert_eq!(word_surprisal(&s, 1..3, &tokens).unwrap(), 4.0);
    match word_surprisal(&s, 1..2, &[Token { id: 0, span: 0..3 }]) {
        Err(EngineError::Misaligned { token_index, .. }) => assert_eq!(token_index, 0),
        other => panic!("{other:?}"),
    }
    assert!(matches!(word_surprisal(&s, 9..10, &tokens), Err(EngineError::UncoveredSpan(9, 10))));
}

#[test]
fn uniform_k_token_word() {
    let cfg = EngineConfig::mamba(20, 8, 1, 2);
    let engine = Engine::load(zero_archive(&cfg), cfg).unwrap();
    let tokens = toks(&[1, 2, 3, 4, 5, 6]);
    let s = token_surprisals(&engine, &tokens).unwrap();
    for k in 1..=4 {
        let w = word_surprisal(&s, 2..2 + k, &tokens).unwrap();
        assert!((w - k as f64 * (20f64).ln()).abs() < 1e-12);
        assert!((nats_to_bits(w) - k as f64 * (20f64).log2()).abs() < 1e-12);
    }
}

/// Closed-vocabulary word tokenizer used to pin small vocabularies.
struct WordTokenizer {
    vocab: usize,
    pieces_per_word: usize,
}

impl Tokenizer for WordTokenizer {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn tokenize(&self, text: &[u8]) -> Vec<Token> {
        let text = std::str::from_utf8(text).unwrap();
        let mut out = Vec::new();
        let mut start = 0;
        for (i, w) in text.split(' ').enumerate() {
            let end = start + w.len() + usize::from(i > 0);
            let width = (end - start).div_ceil(self.pieces_per_word);
            let mut s = start;
            while s < end {
                let e = (s + width).min(end);
                out.push(Token { id: (out.len() % (self.vocab - 1)) as u32, span: s..e });
                s = e;
            }
            start = end;
        }
        out
    }

    fn detokenize(&self, _: &[u32]) -> Vec<u8> {
        Vec::new()
    }
}

/// Puts all mass on a fixed continuation.
struct OracleModel {
    vocab: usize,
    continuation: Vec<u32>,
}

impl LanguageModel for OracleModel {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn logprob_rows(&self, ids: &[u32]) -> Result<Vec<LogProbRow>, EngineError> {
        Ok((0..ids.len())
            .map(|i| {
                let mut v = vec![f64::NEG_INFINITY; self.vocab];
                v[self.continuation[i] as usize] = 0.0;
                LogProbRow::from_log_probs(v)
            })
            .collect())
    }
}

#[test]
fn perplexity_examples() {
    let text = "aa bb ccc dd ee ff ggg hh ii jj";
    let cfg = EngineConfig::rwkv(50, 8, 1);
    let uniform = Engine::load(zero_archive(&cfg), cfg).unwrap();

    let one = WordTokenizer { vocab: 50, pieces_per_word: 1 };
    let stats = word_level_perplexity(&uniform, &one, text).unwrap();
    assert_eq!((stats.words, stats.tokens), (10, 10));
    assert!((stats.perplexity() - 50.0).abs() < 1e-9);

    let two = WordTokenizer { vocab: 50, pieces_per_word: 2 };
    let stats = word_level_perplexity(&uniform, &two, text).unwrap();
    assert_eq!(stats.tokens, 20);
    assert!((stats.perplexity() - 2500.0).abs() < 1e-6);

    let oracle = OracleModel { vocab: 50, continuation: one.tokenize(text.as_bytes()).iter().map(|t| t.id).collect() };
    assert_eq!(word_level_perplexity(&oracle, &one, text).unwrap().perplexity(), 1.0);

    assert!(matches!(word_level_perplexity(&uniform, &one, "   "), Err(EngineError::EmptyInput(_))));
}

#[test]
fn piece_tokenizer_words_align_with_spans() {
    let tok = PieceTokenizer::new(["the", " cat", " sat"]);
    let cfg = EngineConfig::transformer(tok.vocab_size(), 8, 1, 2);
    let engine = Engine::random(cfg, 4).unwrap();
    let text = b"the cat sat on";
    let tokens = tok.tokenize(text);
    let s = token_surprisals(&engine, &tokens).unwrap();
    // " on" is byte fallback: three tokens
    assert_eq!(word_token_range(11..14, &tokens).unwrap().len(), 3);
    let w = word_surprisal(&s, 11..14, &tokens).unwrap();
    assert!((w - s[3..6].iter().sum::<f64>()).abs() < 1e-12);
}
