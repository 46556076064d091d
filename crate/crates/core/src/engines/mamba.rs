//! Mamba-style block: input projection, causal depthwise convolution,
//! selective scan with input-dependent step size and (B, C), gated by the
//! second half of the input projection.
//!
//! ```text
//! h_t = exp(delta_t * A) * h_{t-1} + delta_t * B_t * u_t
//! y_t = C_t . h_t + D * u_t
//! ```
//!
//! State per layer: the last `d_conv - 1` convolution inputs followed by the
//! `d_inner x d_state` scan state.

use super::ops::{matvec, rms_norm, silu, softplus};
use super::{take, EngineConfig, Family, FamilyParams, LogProbRow, RecurrentState, WeightArchive};

struct Layer {
    norm_w: Vec<f32>,
    in_proj: Vec<f32>,
    conv_w: Vec<f32>,
    conv_b: Vec<f32>,
    x_proj: Vec<f32>,
    dt_proj_w: Vec<f32>,
    dt_proj_b: Vec<f32>,
    /// `A = -exp(A_log)`, row-major `[d_inner, d_state]`.
    a: Vec<f64>,
    d_skip: Vec<f32>,
    out_proj: Vec<f32>,
}

pub(super) struct Mamba {
    vocab: usize,
    d: usize,
    inner: usize,
    d_state: usize,
    d_conv: usize,
    dt_rank: usize,
    embed: Vec<f32>,
    layers: Vec<Layer>,
    norm_f: Vec<f32>,
    head: Vec<f32>,
}

/// Per-position quantities feeding the scan.
struct ScanInputs {
    u: Vec<f64>,
    z: Vec<f64>,
    delta: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
}

impl Mamba {
    pub fn new(config: &EngineConfig, archive: &WeightArchive) -> Self {
        let FamilyParams::Mamba { d_state, d_conv, .. } = config.params else { unreachable!() };
        let layers = (0..config.n_layers)
            .map(|i| {
                let t = |s: &str| take(archive, &format!("layers.{i}.{s}"));
                Layer {
                    norm_w: t("norm.weight"),
                    in_proj: t("in_proj.weight"),
                    conv_w: t("conv1d.weight"),
                    conv_b: t("conv1d.bias"),
                    x_proj: t("x_proj.weight"),
                    dt_proj_w: t("dt_proj.weight"),
                    dt_proj_b: t("dt_proj.bias"),
                    a: t("A_log").iter().map(|&v| -(v as f64).exp()).collect(),
                    d_skip: t("D"),
                    out_proj: t("out_proj.weight"),
                }
            })
            .collect();
        Self {
            vocab: config.vocab_size,
            d: config.d_model,
            inner: config.mamba_inner(),
            d_state,
            d_conv,
            dt_rank: config.mamba_dt_rank(),
            embed: take(archive, "embed.weight"),
            layers,
            norm_f: take(archive, "norm_f.weight"),
            head: take(archive, "head.weight"),
        }
    }

    fn layer_state_len(&self) -> usize {
        self.inner * (self.d_conv - 1) + self.inner * self.d_state
    }

    pub fn state_len(&self) -> usize {
        self.layer_state_len() * self.layers.len()
    }

    pub fn initial_state(&self) -> RecurrentState {
        RecurrentState::new(Family::Mamba, vec![0.0; self.state_len()])
    }

    fn embed(&self, id: u32) -> Vec<f64> {
        let d = self.d;
        self.embed[id as usize * d..(id as usize + 1) * d].iter().map(|&v| v as f64).collect()
    }

    /// Splits the input projection into the conv branch and the gate.
    fn project_in(&self, layer: &Layer, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let normed = rms_norm(x, &layer.norm_w);
        let mut xz = matvec(&layer.in_proj, 2 * self.inner, self.d, &normed);
        let z = xz.split_off(self.inner);
        (xz, z)
    }

    /// Causal depthwise convolution at one position; `window[j]` is the
    /// input `d_conv - 1 - j` steps back (so `window[d_conv - 1]` is current).
    fn convolve(&self, layer: &Layer, window: &[&[f64]]) -> Vec<f64> {
        let k = self.d_conv;
        (0..self.inner)
            .map(|ch| {
                let mut acc = layer.conv_b[ch] as f64;
                for (j, w) in window.iter().enumerate() {
                    acc += layer.conv_w[ch * k + j] as f64 * w[ch];
                }
                acc
            })
            .collect()
    }

    fn scan_inputs(&self, layer: &Layer, conv: Vec<f64>, z: Vec<f64>) -> ScanInputs {
        let (r, n) = (self.dt_rank, self.d_state);
        let u: Vec<f64> = conv.into_iter().map(silu).collect();
        let proj = matvec(&layer.x_proj, r + 2 * n, self.inner, &u);
        let dt = matvec(&layer.dt_proj_w, self.inner, r, &proj[..r]);
        let delta = dt.iter().zip(&layer.dt_proj_b).map(|(&v, &b)| softplus(v + b as f64)).collect();
        ScanInputs { u, z, delta, b: proj[r..r + n].to_vec(), c: proj[r + n..].to_vec() }
    }

    fn finish(&self, layer: &Layer, inputs: &ScanInputs, y: Vec<f64>) -> Vec<f64> {
        let gated: Vec<f64> = y
            .iter()
            .enumerate()
            .map(|(ch, &yv)| (yv + layer.d_skip[ch] as f64 * inputs.u[ch]) * silu(inputs.z[ch]))
            .collect();
        matvec(&layer.out_proj, self.d, self.inner, &gated)
    }

    fn output_row(&self, x: &[f64]) -> LogProbRow {
        let normed = rms_norm(x, &self.norm_f);
        LogProbRow::from_logits(&matvec(&self.head, self.vocab, self.d, &normed))
    }

    pub fn step(&self, state: &RecurrentState, id: u32) -> (RecurrentState, LogProbRow) {
        let (di, n, k) = (self.inner, self.d_state, self.d_conv);
        let mut next = state.data().to_vec();
        let mut x = self.embed(id);
        for (layer, s) in self.layers.iter().zip(next.chunks_exact_mut(self.layer_state_len())) {
            let (conv_buf, h) = s.split_at_mut(di * (k - 1));
            let (xin, z) = self.project_in(layer, &x);
            let conv = {
                let mut window: Vec<&[f64]> = conv_buf.chunks_exact(di).collect();
                window.push(&xin);
                self.convolve(layer, &window)
            };
            if k > 1 {
                conv_buf.copy_within(di.., 0);
                conv_buf[di * (k - 2)..].copy_from_slice(&xin);
            }
            let inputs = self.scan_inputs(layer, conv, z);
            let mut y = vec![0.0; di];
            for ch in 0..di {
                let dt = inputs.delta[ch];
                let row = &mut h[ch * n..(ch + 1) * n];
                for s in 0..n {
                    row[s] = (dt * layer.a[ch * n + s]).exp() * row[s] + dt * inputs.b[s] * inputs.u[ch];
                    y[ch] += inputs.c[s] * row[s];
                }
            }
            for (xv, o) in x.iter_mut().zip(self.finish(layer, &inputs, y)) {
                *xv += o;
            }
        }
        (state.advanced(next), self.output_row(&x))
    }

    /// Unrolled scan: `y_t = sum_{s<=t} C_t . exp(A (cum_t - cum_s)) delta_s B_s u_s`,
    /// with `cum_t` the running sum of step sizes.
    pub fn forward_parallel(&self, ids: &[u32]) -> Vec<LogProbRow> {
        let (di, n, k) = (self.inner, self.d_state, self.d_conv);
        let len = ids.len();
        let mut xs: Vec<Vec<f64>> = ids.iter().map(|&id| self.embed(id)).collect();
        let zeros = vec![0.0; di];
        for layer in &self.layers {
            let (xins, zs): (Vec<_>, Vec<_>) = xs.iter().map(|x| self.project_in(layer, x)).unzip();
            let inputs: Vec<ScanInputs> = zs
                .into_iter()
                .enumerate()
                .map(|(t, z)| {
                    let window: Vec<&[f64]> = (0..k)
                        .map(|j| {
                            let back = k - 1 - j;
                            if back > t { zeros.as_slice() } else { xins[t - back].as_slice() }
                        })
                        .collect();
                    self.scan_inputs(layer, self.convolve(layer, &window), z)
                })
                .collect();
            let mut cum = vec![vec![0.0; di]; len];
            for t in 0..len {
                for ch in 0..di {
                    cum[t][ch] = if t == 0 { 0.0 } else { cum[t - 1][ch] } + inputs[t].delta[ch];
                }
            }
            for t in 0..len {
                let mut y = vec![0.0; di];
                for (ch, yv) in y.iter_mut().enumerate() {
                    for (s, src) in inputs.iter().enumerate().take(t + 1) {
                        let gap = cum[t][ch] - cum[s][ch];
                        let drive = src.delta[ch] * src.u[ch];
                        for m in 0..n {
                            *yv += inputs[t].c[m] * (layer.a[ch * n + m] * gap).exp() * drive * src.b[m];
                        }
                    }
                }
                let out = self.finish(layer, &inputs[t], y);
                for (xv, o) in xs[t].iter_mut().zip(out) {
                    *xv += o;
                }
            }
        }
        xs.iter().map(|x| self.output_row(x)).collect()
    }
}
