//! Pre-norm attention block with rotary positions and parallel residual
//! (attention and MLP both read the block input), GPT-NeoX style.

use super::ops::{affine, gelu, layer_norm, matvec};
use super::{take, EngineConfig, FamilyParams, LogProbRow, WeightArchive};

const ROPE_BASE: f64 = 10_000.0;

struct Layer {
    ln_attn_w: Vec<f32>,
    ln_attn_b: Vec<f32>,
    ln_mlp_w: Vec<f32>,
    ln_mlp_b: Vec<f32>,
    qkv_w: Vec<f32>,
    qkv_b: Vec<f32>,
    out_w: Vec<f32>,
    out_b: Vec<f32>,
    up_w: Vec<f32>,
    up_b: Vec<f32>,
    down_w: Vec<f32>,
    down_b: Vec<f32>,
}

pub(super) struct Transformer {
    vocab: usize,
    d: usize,
    n_heads: usize,
    d_ff: usize,
    embed: Vec<f32>,
    layers: Vec<Layer>,
    ln_f_w: Vec<f32>,
    ln_f_b: Vec<f32>,
    head: Vec<f32>,
}

/// Keys and values of every consumed position, per layer. Grows by
/// `2 * n_layers * d_model` values per token.
#[derive(Debug, Clone)]
pub struct KvCache {
    keys: Vec<Vec<Vec<f64>>>,
    values: Vec<Vec<Vec<f64>>>,
}

impl KvCache {
    pub fn len(&self) -> usize {
        self.keys.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn byte_size(&self) -> usize {
        let count: usize = self
            .keys
            .iter()
            .chain(&self.values)
            .flat_map(|layer| layer.iter().map(Vec::len))
            .sum();
        count * std::mem::size_of::<f64>()
    }
}

impl Transformer {
    pub fn new(config: &EngineConfig, archive: &WeightArchive) -> Self {
        let FamilyParams::Transformer { n_heads, d_ff } = config.params else {
            unreachable!("family checked by caller")
        };
        let layers = (0..config.n_layers)
            .map(|i| {
                let t = |s: &str| take(archive, &format!("layers.{i}.{s}"));
                Layer {
                    ln_attn_w: t("ln_attn.weight"),
                    ln_attn_b: t("ln_attn.bias"),
                    ln_mlp_w: t("ln_mlp.weight"),
                    ln_mlp_b: t("ln_mlp.bias"),
                    qkv_w: t("attn.qkv.weight"),
                    qkv_b: t("attn.qkv.bias"),
                    out_w: t("attn.out.weight"),
                    out_b: t("attn.out.bias"),
                    up_w: t("mlp.up.weight"),
                    up_b: t("mlp.up.bias"),
                    down_w: t("mlp.down.weight"),
                    down_b: t("mlp.down.bias"),
                }
            })
            .collect();
        Self {
            vocab: config.vocab_size,
            d: config.d_model,
            n_heads,
            d_ff,
            embed: take(archive, "embed.weight"),
            layers,
            ln_f_w: take(archive, "ln_f.weight"),
            ln_f_b: take(archive, "ln_f.bias"),
            head: take(archive, "head.weight"),
        }
    }

    fn embed(&self, id: u32) -> Vec<f64> {
        let d = self.d;
        self.embed[id as usize * d..(id as usize + 1) * d].iter().map(|&v| v as f64).collect()
    }

    fn head_dim(&self) -> usize {
        self.d / self.n_heads
    }

    /// Rotates each head's halves by position-dependent angles.
    fn rope(&self, x: &mut [f64], pos: usize) {
        let hd = self.head_dim();
        let half = hd / 2;
        for head in x.chunks_exact_mut(hd) {
            for i in 0..half {
                let freq = ROPE_BASE.powf(-((2 * i) as f64) / hd as f64);
                let (sin, cos) = (pos as f64 * freq).sin_cos();
                let (a, b) = (head[i], head[i + half]);
                head[i] = a * cos - b * sin;
                head[i + half] = b * cos + a * sin;
            }
        }
    }

    /// Query, key and value at position `pos`, rotary already applied.
    fn qkv(&self, layer: &Layer, normed: &[f64], pos: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let d = self.d;
        let all = affine(&layer.qkv_w, &layer.qkv_b, 3 * d, d, normed);
        let mut q = all[..d].to_vec();
        let mut k = all[d..2 * d].to_vec();
        let v = all[2 * d..].to_vec();
        self.rope(&mut q, pos);
        self.rope(&mut k, pos);
        (q, k, v)
    }

    /// Attention of one query over `keys[..]`/`values[..]`, then the output projection.
    fn attend(&self, layer: &Layer, q: &[f64], keys: &[Vec<f64>], values: &[Vec<f64>]) -> Vec<f64> {
        let hd = self.head_dim();
        let scale = 1.0 / (hd as f64).sqrt();
        let mut mixed = vec![0.0; self.d];
        for h in 0..self.n_heads {
            let r = h * hd..(h + 1) * hd;
            let scores: Vec<f64> = keys
                .iter()
                .map(|k| q[r.clone()].iter().zip(&k[r.clone()]).map(|(a, b)| a * b).sum::<f64>() * scale)
                .collect();
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let total: f64 = weights.iter().sum();
            for (w, v) in weights.iter().zip(values) {
                for (m, &vv) in mixed[r.clone()].iter_mut().zip(&v[r.clone()]) {
                    *m += w / total * vv;
                }
            }
        }
        affine(&layer.out_w, &layer.out_b, self.d, self.d, &mixed)
    }

    fn mlp(&self, layer: &Layer, normed: &[f64]) -> Vec<f64> {
        let hidden: Vec<f64> =
            affine(&layer.up_w, &layer.up_b, self.d_ff, self.d, normed).into_iter().map(gelu).collect();
        affine(&layer.down_w, &layer.down_b, self.d, self.d_ff, &hidden)
    }

    fn output_row(&self, h: &[f64]) -> LogProbRow {
        let normed = layer_norm(h, &self.ln_f_w, &self.ln_f_b);
        LogProbRow::from_logits(&matvec(&self.head, self.vocab, self.d, &normed))
    }

    /// All positions at once: every layer is applied to the whole sequence
    /// before the next, with position `t` attending to `0..=t`.
    pub fn forward(&self, ids: &[u32]) -> Vec<LogProbRow> {
        let mut hidden: Vec<Vec<f64>> = ids.iter().map(|&id| self.embed(id)).collect();
        for layer in &self.layers {
            let mut queries = Vec::with_capacity(ids.len());
            let mut keys = Vec::with_capacity(ids.len());
            let mut values = Vec::with_capacity(ids.len());
            for (pos, h) in hidden.iter().enumerate() {
                let normed = layer_norm(h, &layer.ln_attn_w, &layer.ln_attn_b);
                let (q, k, v) = self.qkv(layer, &normed, pos);
                queries.push(q);
                keys.push(k);
                values.push(v);
            }
            let updates: Vec<Vec<f64>> = hidden
                .iter()
                .enumerate()
                .map(|(t, h)| {
                    let attn = self.attend(layer, &queries[t], &keys[..=t], &values[..=t]);
                    let mlp = self.mlp(layer, &layer_norm(h, &layer.ln_mlp_w, &layer.ln_mlp_b));
                    attn.iter().zip(&mlp).map(|(a, m)| a + m).collect()
                })
                .collect();
            for (h, u) in hidden.iter_mut().zip(updates) {
                for (hv, uv) in h.iter_mut().zip(u) {
                    *hv += uv;
                }
            }
        }
        hidden.iter().map(|h| self.output_row(h)).collect()
    }

    pub fn empty_cache(&self) -> KvCache {
        KvCache { keys: vec![Vec::new(); self.layers.len()], values: vec![Vec::new(); self.layers.len()] }
    }

    pub fn step_cached(&self, cache: &mut KvCache, id: u32) -> LogProbRow {
        let pos = cache.len();
        let mut h = self.embed(id);
        for (l, layer) in self.layers.iter().enumerate() {
            let normed = layer_norm(&h, &layer.ln_attn_w, &layer.ln_attn_b);
            let (q, k, v) = self.qkv(layer, &normed, pos);
            cache.keys[l].push(k);
            cache.values[l].push(v);
            let attn = self.attend(layer, &q, &cache.keys[l], &cache.values[l]);
            let mlp = self.mlp(layer, &layer_norm(&h, &layer.ln_mlp_w, &layer.ln_mlp_b));
            for ((hv, a), m) in h.iter_mut().zip(attn).zip(mlp) {
                *hv += a + m;
            }
        }
        self.output_row(&h)
    }
}
