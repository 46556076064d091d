//! Profiled deviance by penalized least squares.
//!
//! For relative covariance factor `Lambda(theta)` let `L` be the Cholesky
//! factor of `Lambda' Z' Z Lambda + I`. Then
//!
//! ```text
//! cu   = L^-1 Lambda' Z' y
//! RZX  = L^-1 Lambda' Z' X
//! RX'RX = X'X - RZX' RZX
//! beta = (RX'RX)^-1 (X'y - RZX' cu)
//! r2   = y'y - |cu|^2 - (X'y - RZX' cu)' beta
//! ```
//!
//! and, with `ld = log|L|^2`,
//!
//! ```text
//! ML:   ld + n (1 + log(2 pi r2 / n))
//! REML: ld + log|RX|^2 - log|X'X| + (n - p)(1 + log(2 pi r2 / (n - p)))
//! ```
//!
//! The REML form is the likelihood of error contrasts, so both criteria are
//! unchanged by affine rescaling of the fixed-effect columns.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{DesignMatrices, LmmError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Criterion {
    #[default]
    Reml,
    Ml,
}

impl Criterion {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Reml => "REML",
            Self::Ml => "ML",
        }
    }
}

/// Everything that follows from one theta.
#[derive(Debug, Clone)]
pub struct Profiled {
    pub deviance: f64,
    pub beta: DVector<f64>,
    pub sigma2: f64,
    pub pwrss: f64,
    /// `(RX'RX)^-1`; times `sigma2` this is the covariance of `beta`.
    pub beta_cov_unscaled: DMatrix<f64>,
}

/// Cross-products of one design and response, computed once.
pub struct Profiler<'a> {
    design: &'a DesignMatrices,
    ztz: DMatrix<f64>,
    ztx: DMatrix<f64>,
    zty: DVector<f64>,
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
    yty: f64,
    log_det_xtx: f64,
}

impl<'a> Profiler<'a> {
    pub fn new(design: &'a DesignMatrices, y: &[f64]) -> Result<Self, LmmError> {
        let (n, p, q) = (design.n(), design.p(), design.q());
        if y.len() != n {
            return Err(LmmError::Dimension(format!("design has {n} rows but y has {}", y.len())));
        }
        if n <= p {
            return Err(LmmError::TooFewRows { n, p });
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(LmmError::NonFinite("response".into()));
        }
        let x = &design.x;
        let yv = DVector::from_column_slice(y);
        let xtx = x.transpose() * x;
        let xty = x.transpose() * &yv;
        let log_det_xtx = match Cholesky::new(xtx.clone()) {
            Some(c) => 2.0 * c.l().diagonal().iter().map(|d| d.ln()).sum::<f64>(),
            None => return Err(LmmError::RankDeficient("X'X is not positive definite".into())),
        };

        // sparse rows of Z: at most one level per term
        let mut ztz = DMatrix::zeros(q, q);
        let mut ztx = DMatrix::zeros(q, p);
        let mut zty = DVector::zeros(q);
        let mut idx: Vec<usize> = Vec::new();
        let mut val: Vec<f64> = Vec::new();
        for i in 0..n {
            idx.clear();
            val.clear();
            for t in &design.terms {
                let base = t.offset + t.level_of_row[i] * t.r();
                for c in 0..t.r() {
                    idx.push(base + c);
                    val.push(t.values[c][i]);
                }
            }
            for (a, (&ia, &va)) in idx.iter().zip(&val).enumerate() {
                for (&ib, &vb) in idx[..=a].iter().zip(&val[..=a]) {
                    ztz[(ia, ib)] += va * vb;
                }
                for j in 0..p {
                    ztx[(ia, j)] += va * x[(i, j)];
                }
                zty[ia] += va * y[i];
            }
        }
        // only one triangle was accumulated per row pair; fold into both
        for a in 0..q {
            for b in 0..a {
                let v = ztz[(a, b)] + ztz[(b, a)];
                ztz[(a, b)] = v;
                ztz[(b, a)] = v;
            }
        }
        Ok(Self { design, ztz, ztx, zty, xtx, xty, yty: yv.norm_squared(), log_det_xtx })
    }

    pub fn design(&self) -> &DesignMatrices {
        self.design
    }

    /// `Lambda' M` for a matrix with `q` rows.
    fn lambda_t_left(&self, factors: &[DMatrix<f64>], m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = m.clone();
        for (t, f) in self.design.terms.iter().zip(factors) {
            let ft = f.transpose();
            for l in 0..t.levels.len() {
                let o = t.offset + l * t.r();
                let block = &ft * m.rows(o, t.r());
                out.rows_mut(o, t.r()).copy_from(&block);
            }
        }
        out
    }

    pub fn evaluate(&self, theta: &[f64], criterion: super::Criterion) -> Result<Profiled, LmmError> {
        let d = self.design;
        if theta.len() != d.n_theta() {
            return Err(LmmError::Dimension(format!("theta has {} entries, design needs {}", theta.len(), d.n_theta())));
        }
        let (n, p, q) = (d.n() as f64, d.p(), d.q());
        let factors: Vec<DMatrix<f64>> =
            d.terms.iter().zip(d.split_theta(theta)).map(|(t, th)| t.factor(th)).collect();

        let (log_det_l, cu, rzx) = if q == 0 {
            (0.0, DVector::zeros(0), DMatrix::zeros(0, p))
        } else {
            // A = Lambda' (Z'Z) Lambda: left-multiply, transpose, left-multiply again
            let half = self.lambda_t_left(&factors, &self.ztz);
            let mut a = self.lambda_t_left(&factors, &half.transpose());
            for i in 0..q {
                a[(i, i)] += 1.0;
            }
            let chol = Cholesky::new(a).ok_or_else(|| LmmError::NonFinite("penalized cross-product".into()))?;
            let l = chol.l();
            let log_det_l = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
            let lzty = self.lambda_t_left(&factors, &DMatrix::from_column_slice(q, 1, self.zty.as_slice()));
            let cu = l.solve_lower_triangular(&lzty).expect("positive diagonal").column(0).into_owned();
            let rzx = l.solve_lower_triangular(&self.lambda_t_left(&factors, &self.ztx)).expect("positive diagonal");
            (log_det_l, cu, rzx)
        };

        let rx_sq = &self.xtx - rzx.transpose() * &rzx;
        let rx = Cholesky::new(rx_sq).ok_or_else(|| LmmError::RankDeficient("X'V^-1 X is singular".into()))?;
        let rhs = &self.xty - rzx.transpose() * &cu;
        let beta = rx.solve(&rhs);
        let pwrss = self.yty - cu.norm_squared() - rhs.dot(&beta);
        if !(pwrss > 0.0) {
            return Err(LmmError::NonFinite("penalized residual sum of squares is not positive".into()));
        }
        let log_det_rx = 2.0 * rx.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let two_pi = 2.0 * std::f64::consts::PI;
        let (deviance, sigma2) = match criterion {
            super::Criterion::Ml => (log_det_l + n * (1.0 + (two_pi * pwrss / n).ln()), pwrss / n),
            super::Criterion::Reml => {
                let nr = n - p as f64;
                (
                    log_det_l + log_det_rx - self.log_det_xtx + nr * (1.0 + (two_pi * pwrss / nr).ln()),
                    pwrss / nr,
                )
            }
        };
        Ok(Profiled { deviance, beta, sigma2, pwrss, beta_cov_unscaled: rx.inverse() })
    }
}

/// −2 × the profiled (restricted) log-likelihood at `theta`.
pub fn profiled_deviance(
    design: &DesignMatrices,
    y: &[f64],
    theta: &[f64],
    criterion: Criterion,
) -> Result<f64, LmmError> {
    Ok(Profiler::new(design, y)?.evaluate(theta, criterion)?.deviance)
}
