//! Linear mixed-effects models fitted by profiled REML or ML, plus OLS.
//!
//! Random effects are `b = Lambda(theta) u` with `u ~ N(0, sigma2 I)`, where
//! `Lambda` is block diagonal with one lower-triangular `r x r` factor per
//! term, repeated over the term's levels. Theta holds each factor's
//! lower triangle column by column (diagonal only for uncorrelated terms);
//! diagonal entries are bounded below by zero.

mod deviance;
mod design;
mod fit;
mod ols;
mod optimize;

use thiserror::Error;

pub use deviance::{profiled_deviance, Criterion, Profiled, Profiler};
pub use design::{build_design, DesignMatrices, FixedSpec, ModelFrame, RandomTerm, TermBlock, INTERCEPT};
pub use fit::{aic, aic_value, fit_at, fit_lmm, FitOptions, LmmFit, VarianceComponent, SINGULAR_TOL};
pub use ols::{fit_ols, OlsFit};

#[derive(Debug, Error)]
pub enum LmmError {
    #[error("unknown column {0}")]
    UnknownColumn(String),
    #[error("grouping factor {0} has fewer than two levels")]
    SingleLevel(String),
    #[error("rank-deficient fixed effects: {0}")]
    RankDeficient(String),
    #[error("need more rows than fixed effects (n = {n}, p = {p})")]
    TooFewRows { n: usize, p: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite values in {0}")]
    NonFinite(String),
}

#[cfg(test)]
mod tests;
