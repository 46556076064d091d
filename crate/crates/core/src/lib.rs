//! Toolkit for evaluating how well language-model surprisal predicts human
//! reading times and N400 amplitudes.
//!
//! - [`engines`]: transformer, RWKV and Mamba engines, tokenization and surprisal.
//! - [`corpus`]: dataset recipes, trial loading, exclusions and context construction.
//! - [`lmm`]: linear mixed-effects models (profiled REML/ML), AIC and OLS.
//! - [`metastats`]: architecture/scale meta-regressions with FDR correction.

pub mod corpus;
pub mod engines;
pub mod lmm;
pub mod metastats;
