//! Dense kernels shared by the three engine families.
//!
//! Weights are stored as `f32`; every reduction accumulates in `f64`.

/// `W x` for a row-major `[rows, cols]` weight matrix.
pub fn matvec(w: &[f32], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    w.chunks_exact(cols)
        .map(|row| row.iter().zip(x).map(|(&a, &b)| a as f64 * b).sum())
        .collect()
}

/// `W x + b`.
pub fn affine(w: &[f32], b: &[f32], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    let mut y = matvec(w, rows, cols, x);
    for (yi, &bi) in y.iter_mut().zip(b) {
        *yi += bi as f64;
    }
    y
}

pub fn layer_norm(x: &[f64], weight: &[f32], bias: &[f32]) -> Vec<f64> {
    const EPS: f64 = 1e-5;
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + EPS).sqrt();
    x.iter()
        .zip(weight.iter().zip(bias))
        .map(|(&v, (&w, &b))| (v - mean) * inv * w as f64 + b as f64)
        .collect()
}

pub fn rms_norm(x: &[f64], weight: &[f32]) -> Vec<f64> {
    const EPS: f64 = 1e-5;
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let inv = 1.0 / (ms + EPS).sqrt();
    x.iter().zip(weight).map(|(&v, &w)| v * inv * w as f64).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

pub fn softplus(x: f64) -> f64 {
    if x > 20.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + statrs::function::erf::erf(x / std::f64::consts::SQRT_2))
}

/// Numerically stable `log(sum(exp(x)))`.
pub fn log_sum_exp(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|v| v - lse).collect()
}

/// Softmax-weighted average of `values` under the given log-weights.
///
/// Used by the attention and parallel WKV paths.
pub fn weighted_mean(log_weights: &[f64], values: impl Fn(usize) -> f64) -> f64 {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &lw) in log_weights.iter().enumerate() {
        let e = (lw - max).exp();
        num += e * values(i);
        den += e;
    }
    num / den
}
