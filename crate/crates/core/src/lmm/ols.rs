use nalgebra::{DMatrix, DVector};

use super::LmmError;
use crate::metastats::t_pvalue;

/// Residual sums of squares at or below this fraction of the total sum of
/// squares count as an exact fit.
const PERFECT_FIT_RSS: f64 = 1e-24;

/// Estimates whose magnitude is below this in a perfect fit are reported as
/// zero effects (t = 0) rather than infinitely significant ones.
const PERFECT_FIT_ZERO: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub estimates: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub t_values: Vec<f64>,
    pub p_values: Vec<f64>,
    pub df: usize,
    pub sigma2: f64,
    pub rss: f64,
    /// Zero residuals: standard errors are 0 and t statistics infinite.
    pub perfect_fit: bool,
}

/// Ordinary least squares with classical Student-t inference.
pub fn fit_ols(x: &DMatrix<f64>, y: &[f64]) -> Result<OlsFit, LmmError> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(LmmError::Dimension(format!("X has {n} rows but y has {}", y.len())));
    }
    if n <= p {
        return Err(LmmError::TooFewRows { n, p });
    }
    let qr = x.clone().qr();
    let r = qr.r();
    let max_diag = (0..p).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if let Some(col) = (0..p).find(|&i| r[(i, i)].abs() <= 1e-10 * max_diag.max(f64::MIN_POSITIVE)) {
        return Err(LmmError::RankDeficient(format!("column {col} of X is a linear combination of earlier columns")));
    }
    let yv = DVector::from_column_slice(y);
    let qty = qr.q().transpose() * &yv;
    let beta = r.solve_upper_triangular(&qty).expect("full rank checked");
    let resid = &yv - x * &beta;
    let rss = resid.norm_squared();
    let mean = y.iter().sum::<f64>() / n as f64;
    let tss: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let df = n - p;
    let sigma2 = rss / df as f64;
    let perfect_fit = rss <= PERFECT_FIT_RSS * tss.max(f64::MIN_POSITIVE);

    let rinv = r.solve_upper_triangular(&DMatrix::identity(p, p)).expect("full rank checked");
    let mut fit = OlsFit {
        estimates: beta.iter().copied().collect(),
        std_errors: Vec::with_capacity(p),
        t_values: Vec::with_capacity(p),
        p_values: Vec::with_capacity(p),
        df,
        sigma2,
        rss,
        perfect_fit,
    };
    for j in 0..p {
        let est = beta[j];
        // diag of (X'X)^-1 = row norms of R^-1
        let se = if perfect_fit { 0.0 } else { (sigma2 * rinv.row(j).norm_squared()).sqrt() };
        let t = if !perfect_fit {
            est / se
        } else if est.abs() < PERFECT_FIT_ZERO {
            0.0
        } else {
            est.signum() * f64::INFINITY
        };
        fit.std_errors.push(se);
        fit.t_values.push(t);
        fit.p_values.push(t_pvalue(t, df as f64));
    }
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn design(cols: &[&[f64]]) -> DMatrix<f64> {
        let n = cols[0].len();
        DMatrix::from_fn(n, cols.len() + 1, |i, j| if j == 0 { 1.0 } else { cols[j - 1][i] })
    }

    #[test]
    fn exact_line() {
        let fit = fit_ols(&design(&[&[1.0, 2.0, 3.0]]), &[2.0, 4.0, 6.0]).unwrap();
        assert!(fit.estimates[0].abs() < 1e-12);
        assert!((fit.estimates[1] - 2.0).abs() < 1e-12);
        assert!(fit.rss < 1e-20);
        assert!(fit.perfect_fit);
        assert_eq!(fit.t_values[0], 0.0);
        assert_eq!(fit.p_values[0], 1.0);
        assert_eq!(fit.t_values[1], f64::INFINITY);
        assert_eq!(fit.p_values[1], 0.0);
    }

    #[test]
    fn matches_normal_equations_and_t_identity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let n = 30;
        let x1: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let x2: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| 1.0 + 0.5 * x1[i] - x2[i] + <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
            .collect();
        let x = design(&[&x1, &x2]);
        let fit = fit_ols(&x, &y).unwrap();
        // independent route: (X'X)^-1 X'y by explicit inverse
        let xtx_inv = (x.transpose() * &x).try_inverse().unwrap();
        let beta = &xtx_inv * x.transpose() * DVector::from_vec(y.clone());
        for j in 0..3 {
            assert!((fit.estimates[j] - beta[j]).abs() < 1e-10);
            let se = (fit.sigma2 * xtx_inv[(j, j)]).sqrt();
            assert!((fit.std_errors[j] - se).abs() < 1e-10);
            assert!((fit.t_values[j] - fit.estimates[j] / fit.std_errors[j]).abs() < 1e-12);
        }
        assert_eq!(fit.df, 27);
        assert!(!fit.perfect_fit);
    }

    #[test]
    fn errors() {
        let x = design(&[&[1.0, 2.0, 3.0, 4.0], &[2.0, 4.0, 6.0, 8.0]]);
        assert!(matches!(fit_ols(&x, &[1.0, 2.0, 3.0, 5.0]), Err(LmmError::RankDeficient(_))));
        let x = design(&[&[1.0, 2.0]]);
        assert!(matches!(fit_ols(&x, &[1.0, 2.0]), Err(LmmError::TooFewRows { n: 2, p: 2 })));
    }
}
