//! RWKV-4 style block: token-shift time mixing with a per-channel
//! exponential decay (the WKV recurrence), followed by squared-ReLU channel
//! mixing.
//!
//! State per layer, `5 * d_model` values:
//! `[att_prev | num | den | max_exp | ffn_prev]`, where `num`/`den`/`max_exp`
//! hold the WKV numerator and denominator scaled by `exp(-max_exp)`.

use super::ops::{layer_norm, matvec, sigmoid};
use super::{take, EngineConfig, Family, FamilyParams, LogProbRow, RecurrentState, WeightArchive};

struct Block {
    ln1_w: Vec<f32>,
    ln1_b: Vec<f32>,
    ln2_w: Vec<f32>,
    ln2_b: Vec<f32>,
    /// `w = -exp(time_decay)`, precomputed.
    decay: Vec<f64>,
    first: Vec<f64>,
    att_mix_k: Vec<f32>,
    att_mix_v: Vec<f32>,
    att_mix_r: Vec<f32>,
    att_key: Vec<f32>,
    att_value: Vec<f32>,
    att_receptance: Vec<f32>,
    att_output: Vec<f32>,
    ffn_mix_k: Vec<f32>,
    ffn_mix_r: Vec<f32>,
    ffn_key: Vec<f32>,
    ffn_receptance: Vec<f32>,
    ffn_value: Vec<f32>,
}

pub(super) struct Rwkv {
    vocab: usize,
    d: usize,
    d_ffn: usize,
    embed: Vec<f32>,
    ln0_w: Vec<f32>,
    ln0_b: Vec<f32>,
    blocks: Vec<Block>,
    ln_out_w: Vec<f32>,
    ln_out_b: Vec<f32>,
    head: Vec<f32>,
}

fn mix(x: &[f64], prev: &[f64], m: &[f32]) -> Vec<f64> {
    x.iter()
        .zip(prev)
        .zip(m)
        .map(|((&a, &b), &m)| a * m as f64 + b * (1.0 - m as f64))
        .collect()
}

impl Rwkv {
    pub fn new(config: &EngineConfig, archive: &WeightArchive) -> Self {
        let FamilyParams::Rwkv { d_ffn } = config.params else { unreachable!() };
        let blocks = (0..config.n_layers)
            .map(|i| {
                let t = |s: &str| take(archive, &format!("blocks.{i}.{s}"));
                Block {
                    ln1_w: t("ln1.weight"),
                    ln1_b: t("ln1.bias"),
                    ln2_w: t("ln2.weight"),
                    ln2_b: t("ln2.bias"),
                    decay: t("att.time_decay").iter().map(|&v| -(v as f64).exp()).collect(),
                    first: t("att.time_first").iter().map(|&v| v as f64).collect(),
                    att_mix_k: t("att.time_mix_k"),
                    att_mix_v: t("att.time_mix_v"),
                    att_mix_r: t("att.time_mix_r"),
                    att_key: t("att.key.weight"),
                    att_value: t("att.value.weight"),
                    att_receptance: t("att.receptance.weight"),
                    att_output: t("att.output.weight"),
                    ffn_mix_k: t("ffn.time_mix_k"),
                    ffn_mix_r: t("ffn.time_mix_r"),
                    ffn_key: t("ffn.key.weight"),
                    ffn_receptance: t("ffn.receptance.weight"),
                    ffn_value: t("ffn.value.weight"),
                }
            })
            .collect();
        Self {
            vocab: config.vocab_size,
            d: config.d_model,
            d_ffn,
            embed: take(archive, "embed.weight"),
            ln0_w: take(archive, "ln0.weight"),
            ln0_b: take(archive, "ln0.bias"),
            blocks,
            ln_out_w: take(archive, "ln_out.weight"),
            ln_out_b: take(archive, "ln_out.bias"),
            head: take(archive, "head.weight"),
        }
    }

    pub fn state_len(&self) -> usize {
        5 * self.d * self.blocks.len()
    }

    pub fn initial_state(&self) -> RecurrentState {
        let d = self.d;
        let mut data = vec![0.0; self.state_len()];
        for layer in data.chunks_exact_mut(5 * d) {
            layer[3 * d..4 * d].fill(f64::NEG_INFINITY);
        }
        RecurrentState::new(Family::Rwkv, data)
    }

    fn input(&self, id: u32) -> Vec<f64> {
        let d = self.d;
        let e: Vec<f64> = self.embed[id as usize * d..(id as usize + 1) * d].iter().map(|&v| v as f64).collect();
        layer_norm(&e, &self.ln0_w, &self.ln0_b)
    }

    /// Key, value and receptance projections of the token-shifted input.
    fn att_projections(&self, b: &Block, xx: &[f64], prev: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let d = self.d;
        let k = matvec(&b.att_key, d, d, &mix(xx, prev, &b.att_mix_k));
        let v = matvec(&b.att_value, d, d, &mix(xx, prev, &b.att_mix_v));
        let r = matvec(&b.att_receptance, d, d, &mix(xx, prev, &b.att_mix_r)).into_iter().map(sigmoid).collect();
        (k, v, r)
    }

    fn att_output(&self, b: &Block, r: &[f64], wkv: &[f64]) -> Vec<f64> {
        let gated: Vec<f64> = r.iter().zip(wkv).map(|(a, b)| a * b).collect();
        matvec(&b.att_output, self.d, self.d, &gated)
    }

    fn channel_mix(&self, b: &Block, xx: &[f64], prev: &[f64]) -> Vec<f64> {
        let d = self.d;
        let r = matvec(&b.ffn_receptance, d, d, &mix(xx, prev, &b.ffn_mix_r));
        let k: Vec<f64> = matvec(&b.ffn_key, self.d_ffn, d, &mix(xx, prev, &b.ffn_mix_k))
            .into_iter()
            .map(|v| v.max(0.0).powi(2))
            .collect();
        let kv = matvec(&b.ffn_value, d, self.d_ffn, &k);
        r.into_iter().zip(kv).map(|(r, kv)| sigmoid(r) * kv).collect()
    }

    fn output_row(&self, x: &[f64]) -> LogProbRow {
        let normed = layer_norm(x, &self.ln_out_w, &self.ln_out_b);
        LogProbRow::from_logits(&matvec(&self.head, self.vocab, self.d, &normed))
    }

    pub fn step(&self, state: &RecurrentState, id: u32) -> (RecurrentState, LogProbRow) {
        let d = self.d;
        let mut next = state.data().to_vec();
        let mut x = self.input(id);
        for (b, s) in self.blocks.iter().zip(next.chunks_exact_mut(5 * d)) {
            let (att_prev, rest) = s.split_at_mut(d);
            let (num, rest) = rest.split_at_mut(d);
            let (den, rest) = rest.split_at_mut(d);
            let (max_exp, ffn_prev) = rest.split_at_mut(d);

            let xx = layer_norm(&x, &b.ln1_w, &b.ln1_b);
            let (k, v, r) = self.att_projections(b, &xx, att_prev);
            let mut wkv = vec![0.0; d];
            for c in 0..d {
                // Output uses the bonus `first` for the current token.
                let cur = b.first[c] + k[c];
                let p = max_exp[c].max(cur);
                let e_old = (max_exp[c] - p).exp();
                let e_cur = (cur - p).exp();
                wkv[c] = (e_old * num[c] + e_cur * v[c]) / (e_old * den[c] + e_cur);
                // State update decays the past by `decay` and adds the current token.
                let decayed = max_exp[c] + b.decay[c];
                let p = decayed.max(k[c]);
                let e_old = (decayed - p).exp();
                let e_cur = (k[c] - p).exp();
                num[c] = e_old * num[c] + e_cur * v[c];
                den[c] = e_old * den[c] + e_cur;
                max_exp[c] = p;
            }
            att_prev.copy_from_slice(&xx);
            for (xv, o) in x.iter_mut().zip(self.att_output(b, &r, &wkv)) {
                *xv += o;
            }

            let xx = layer_norm(&x, &b.ln2_w, &b.ln2_b);
            let out = self.channel_mix(b, &xx, ffn_prev);
            ffn_prev.copy_from_slice(&xx);
            for (xv, o) in x.iter_mut().zip(out) {
                *xv += o;
            }
        }
        (state.advanced(next), self.output_row(&x))
    }

    /// Unrolled form: `wkv_t = sum_i exp(k_i + (t-1-i) w) v_i + exp(u + k_t) v_t`
    /// over the matching denominator, evaluated directly for every position.
    pub fn forward_parallel(&self, ids: &[u32]) -> Vec<LogProbRow> {
        let d = self.d;
        let n = ids.len();
        let mut xs: Vec<Vec<f64>> = ids.iter().map(|&id| self.input(id)).collect();
        let zeros = vec![0.0; d];
        for b in &self.blocks {
            let normed: Vec<Vec<f64>> = xs.iter().map(|x| layer_norm(x, &b.ln1_w, &b.ln1_b)).collect();
            let mut keys = Vec::with_capacity(n);
            let mut vals = Vec::with_capacity(n);
            let mut recs = Vec::with_capacity(n);
            for t in 0..n {
                let prev = if t == 0 { &zeros } else { &normed[t - 1] };
                let (k, v, r) = self.att_projections(b, &normed[t], prev);
                keys.push(k);
                vals.push(v);
                recs.push(r);
            }
            let mut log_w = vec![0.0; n];
            for t in 0..n {
                let mut wkv = vec![0.0; d];
                for c in 0..d {
                    for (i, lw) in log_w.iter_mut().enumerate().take(t) {
                        *lw = keys[i][c] + (t - 1 - i) as f64 * b.decay[c];
                    }
                    log_w[t] = b.first[c] + keys[t][c];
                    wkv[c] = super::ops::weighted_mean(&log_w[..=t], |i| vals[i][c]);
                }
                for (xv, o) in xs[t].iter_mut().zip(self.att_output(b, &recs[t], &wkv)) {
                    *xv += o;
                }
            }
            let normed: Vec<Vec<f64>> = xs.iter().map(|x| layer_norm(x, &b.ln2_w, &b.ln2_b)).collect();
            for t in 0..n {
                let prev = if t == 0 { &zeros } else { &normed[t - 1] };
                let out = self.channel_mix(b, &normed[t], prev);
                for (xv, o) in xs[t].iter_mut().zip(out) {
                    *xv += o;
                }
            }
        }
        xs.iter().map(|x| self.output_row(x)).collect()
    }
}
