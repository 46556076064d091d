use serde::{Deserialize, Serialize};

use super::EngineError;

/// Architecture family of an engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Transformer,
    Rwkv,
    Mamba,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Transformer => "transformer",
            Family::Rwkv => "rwkv",
            Family::Mamba => "mamba",
        }
    }

    pub fn is_recurrent(self) -> bool {
        !matches!(self, Family::Transformer)
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Family-specific dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum FamilyParams {
    /// Pre-norm attention with rotary positions and a GELU MLP.
    Transformer { n_heads: usize, d_ff: usize },
    /// Token-shift time-mix / channel-mix with learned per-channel decay.
    Rwkv { d_ffn: usize },
    /// Diagonal selective state-space scan with input-dependent step sizes.
    Mamba {
        d_state: usize,
        #[serde(default = "default_d_conv")]
        d_conv: usize,
        #[serde(default = "default_expand")]
        expand: usize,
        /// Rank of the step-size projection; defaults to `ceil(d_model / 16)`.
        #[serde(default)]
        dt_rank: Option<usize>,
    },
}

fn default_d_conv() -> usize {
    4
}

fn default_expand() -> usize {
    2
}

/// Dimensions of one engine. The BOS token is always id `vocab_size - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    #[serde(flatten)]
    pub params: FamilyParams,
}

impl EngineConfig {
    pub fn transformer(vocab_size: usize, d_model: usize, n_layers: usize, n_heads: usize) -> Self {
        Self {
            vocab_size,
            d_model,
            n_layers,
            params: FamilyParams::Transformer { n_heads, d_ff: 4 * d_model },
        }
    }

    pub fn rwkv(vocab_size: usize, d_model: usize, n_layers: usize) -> Self {
        Self { vocab_size, d_model, n_layers, params: FamilyParams::Rwkv { d_ffn: 4 * d_model } }
    }

    pub fn mamba(vocab_size: usize, d_model: usize, n_layers: usize, d_state: usize) -> Self {
        Self {
            vocab_size,
            d_model,
            n_layers,
            params: FamilyParams::Mamba { d_state, d_conv: 4, expand: 2, dt_rank: None },
        }
    }

    pub fn family(&self) -> Family {
        match self.params {
            FamilyParams::Transformer { .. } => Family::Transformer,
            FamilyParams::Rwkv { .. } => Family::Rwkv,
            FamilyParams::Mamba { .. } => Family::Mamba,
        }
    }

    pub fn bos_id(&self) -> u32 {
        (self.vocab_size - 1) as u32
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |msg: String| Err(EngineError::InvalidConfig(msg));
        if self.vocab_size < 2 {
            return bad(format!("vocab_size must be >= 2, got {}", self.vocab_size));
        }
        if self.d_model == 0 || self.n_layers == 0 {
            return bad("d_model and n_layers must be positive".into());
        }
        match self.params {
            FamilyParams::Transformer { n_heads, d_ff } => {
                if n_heads == 0 || d_ff == 0 {
                    return bad("n_heads and d_ff must be positive".into());
                }
                if self.d_model % n_heads != 0 || (self.d_model / n_heads) % 2 != 0 {
                    return bad(format!(
                        "d_model {} must split into {} heads of even width",
                        self.d_model, n_heads
                    ));
                }
            }
            FamilyParams::Rwkv { d_ffn } => {
                if d_ffn == 0 {
                    return bad("d_ffn must be positive".into());
                }
            }
            FamilyParams::Mamba { d_state, d_conv, expand, dt_rank } => {
                if d_state == 0 || d_conv == 0 || expand == 0 || dt_rank == Some(0) {
                    return bad("mamba dimensions must be positive".into());
                }
            }
        }
        Ok(())
    }

    /// Name and shape of every tensor an engine of this config is built from,
    /// in a stable order.
    pub fn required_tensors(&self) -> Vec<(String, Vec<usize>)> {
        let v = self.vocab_size;
        let d = self.d_model;
        let mut out: Vec<(String, Vec<usize>)> = Vec::new();
        let mut push = |name: String, shape: &[usize]| out.push((name, shape.to_vec()));
        push("embed.weight".into(), &[v, d]);
        match self.params {
            FamilyParams::Transformer { d_ff, .. } => {
                for i in 0..self.n_layers {
                    let p = format!("layers.{i}");
                    push(format!("{p}.ln_attn.weight"), &[d]);
                    push(format!("{p}.ln_attn.bias"), &[d]);
                    push(format!("{p}.ln_mlp.weight"), &[d]);
                    push(format!("{p}.ln_mlp.bias"), &[d]);
                    push(format!("{p}.attn.qkv.weight"), &[3 * d, d]);
                    push(format!("{p}.attn.qkv.bias"), &[3 * d]);
                    push(format!("{p}.attn.out.weight"), &[d, d]);
                    push(format!("{p}.attn.out.bias"), &[d]);
                    push(format!("{p}.mlp.up.weight"), &[d_ff, d]);
                    push(format!("{p}.mlp.up.bias"), &[d_ff]);
                    push(format!("{p}.mlp.down.weight"), &[d, d_ff]);
                    push(format!("{p}.mlp.down.bias"), &[d]);
                }
                push("ln_f.weight".into(), &[d]);
                push("ln_f.bias".into(), &[d]);
            }
            FamilyParams::Rwkv { d_ffn } => {
                push("ln0.weight".into(), &[d]);
                push("ln0.bias".into(), &[d]);
                for i in 0..self.n_layers {
                    let p = format!("blocks.{i}");
                    push(format!("{p}.ln1.weight"), &[d]);
                    push(format!("{p}.ln1.bias"), &[d]);
                    push(format!("{p}.ln2.weight"), &[d]);
                    push(format!("{p}.ln2.bias"), &[d]);
                    push(format!("{p}.att.time_decay"), &[d]);
                    push(format!("{p}.att.time_first"), &[d]);
                    push(format!("{p}.att.time_mix_k"), &[d]);
                    push(format!("{p}.att.time_mix_v"), &[d]);
                    push(format!("{p}.att.time_mix_r"), &[d]);
                    push(format!("{p}.att.key.weight"), &[d, d]);
                    push(format!("{p}.att.value.weight"), &[d, d]);
                    push(format!("{p}.att.receptance.weight"), &[d, d]);
                    push(format!("{p}.att.output.weight"), &[d, d]);
                    push(format!("{p}.ffn.time_mix_k"), &[d]);
                    push(format!("{p}.ffn.time_mix_r"), &[d]);
                    push(format!("{p}.ffn.key.weight"), &[d_ffn, d]);
                    push(format!("{p}.ffn.receptance.weight"), &[d, d]);
                    push(format!("{p}.ffn.value.weight"), &[d, d_ffn]);
                }
                push("ln_out.weight".into(), &[d]);
                push("ln_out.bias".into(), &[d]);
            }
            FamilyParams::Mamba { d_state, d_conv, .. } => {
                let di = self.mamba_inner();
                let r = self.mamba_dt_rank();
                for i in 0..self.n_layers {
                    let p = format!("layers.{i}");
                    push(format!("{p}.norm.weight"), &[d]);
                    push(format!("{p}.in_proj.weight"), &[2 * di, d]);
                    push(format!("{p}.conv1d.weight"), &[di, d_conv]);
                    push(format!("{p}.conv1d.bias"), &[di]);
                    push(format!("{p}.x_proj.weight"), &[r + 2 * d_state, di]);
                    push(format!("{p}.dt_proj.weight"), &[di, r]);
                    push(format!("{p}.dt_proj.bias"), &[di]);
                    push(format!("{p}.A_log"), &[di, d_state]);
                    push(format!("{p}.D"), &[di]);
                    push(format!("{p}.out_proj.weight"), &[d, di]);
                }
                push("norm_f.weight".into(), &[d]);
            }
        }
        push("head.weight".into(), &[v, d]);
        out
    }

    /// Total parameter count implied by the dimensions.
    pub fn param_count(&self) -> usize {
        self.required_tensors().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }

    pub(crate) fn mamba_inner(&self) -> usize {
        match self.params {
            FamilyParams::Mamba { expand, .. } => expand * self.d_model,
            _ => 0,
        }
    }

    pub(crate) fn mamba_dt_rank(&self) -> usize {
        match self.params {
            FamilyParams::Mamba { dt_rank, .. } => dt_rank.unwrap_or(self.d_model.div_ceil(16)),
            _ => 0,
        }
    }
}
