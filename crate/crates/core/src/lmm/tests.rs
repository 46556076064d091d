use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::*;

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn labels(prefix: &str, idx: impl IntoIterator<Item = usize>) -> Vec<String> {
    idx.into_iter().map(|i| format!("{prefix}{i:02}")).collect()
}

/// Marginal-likelihood route: builds `V = I + Z Lambda Lambda' Z'` densely
/// and profiles beta and sigma2 by generalized least squares.
fn dense_deviance(design: &DesignMatrices, y: &[f64], theta: &[f64], criterion: Criterion) -> (f64, DVector<f64>) {
    let n = design.n();
    let p = design.p();
    let z = design.z_dense();
    let lam = design.lambda_dense(theta);
    let zl = &z * &lam;
    let v = DMatrix::identity(n, n) + &zl * zl.transpose();
    let vinv = v.clone().try_inverse().unwrap();
    let x = &design.x;
    let yv = DVector::from_column_slice(y);
    let xtvx = x.transpose() * &vinv * x;
    let beta = xtvx.clone().try_inverse().unwrap() * x.transpose() * &vinv * &yv;
    let r = &yv - x * &beta;
    let r2 = (r.transpose() * &vinv * &r)[(0, 0)];
    let two_pi = 2.0 * std::f64::consts::PI;
    let ld_v = v.determinant().ln();
    let dev = match criterion {
        Criterion::Ml => ld_v + n as f64 * (1.0 + (two_pi * r2 / n as f64).ln()),
        Criterion::Reml => {
            let nr = (n - p) as f64;
            ld_v + xtvx.determinant().ln() - (x.transpose() * x).determinant().ln()
                + nr * (1.0 + (two_pi * r2 / nr).ln())
        }
    };
    (dev, beta)
}

/// 10-row crossed design: correlated intercept+slope by subject, intercept by item.
fn small_problem(seed: u64) -> (ModelFrame, FixedSpec, Vec<RandomTerm>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 10;
    let x1: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
    let y: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * x1[i] + normal(&mut rng)).collect();
    let mut frame = ModelFrame::new();
    frame.add_numeric("x1", x1).unwrap();
    frame.add_numeric("y", y.clone()).unwrap();
    frame.add_factor("subject", labels("s", (0..n).map(|i| i % 3))).unwrap();
    frame.add_factor("item", labels("i", (0..n).map(|i| i % 4))).unwrap();
    let random = vec![RandomTerm::with_slopes("subject", ["x1"]), RandomTerm::intercept("item")];
    (frame, FixedSpec::new(["x1"]), random, y)
}

#[test]
fn design_examples() {
    let mut frame = ModelFrame::new();
    frame.add_numeric("y", vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
    frame.add_factor("subject", labels("s", [2, 0, 1, 0, 2])).unwrap();
    let d = build_design(&frame, &FixedSpec::new(Vec::<String>::new()), &[RandomTerm::intercept("subject")]).unwrap();
    assert_eq!(d.x, DMatrix::from_element(5, 1, 1.0));
    let z = d.z_dense();
    assert_eq!(z.ncols(), 3);
    for i in 0..5 {
        let row: Vec<f64> = z.row(i).iter().copied().collect();
        assert_eq!(row.iter().filter(|&&v| v != 0.0).count(), 1);
        assert_eq!(row.iter().sum::<f64>(), 1.0);
    }
    // sorted levels: s00 s01 s02
    assert_eq!(z[(0, 2)], 1.0);
    assert_eq!(z[(1, 0)], 1.0);
}

#[test]
fn q_and_theta_counts_by_enumeration() {
    for g in 2..=5 {
        let n = 3 * g;
        let mut frame = ModelFrame::new();
        frame.add_numeric("x", (0..n).map(|i| i as f64).collect()).unwrap();
        frame.add_factor("g", labels("g", (0..n).map(|i| i % g))).unwrap();
        let d = build_design(&frame, &FixedSpec::new(["x"]), &[RandomTerm::with_slopes("g", ["x"])]).unwrap();
        let z = d.z_dense();
        assert_eq!(z.ncols(), 2 * g);
        assert_eq!(d.q(), 2 * g);
        assert_eq!(d.n_theta(), 3);
        // enumerate the nonzero pattern: each row touches exactly its level's pair
        for i in 0..n {
            let l = i % g;
            for c in 0..2 * g {
                let expected = match c {
                    c if c == 2 * l => 1.0,
                    c if c == 2 * l + 1 => i as f64,
                    _ => 0.0,
                };
                assert_eq!(z[(i, c)], expected);
            }
        }
        let unc = build_design(&frame, &FixedSpec::new(["x"]), &[RandomTerm::with_slopes("g", ["x"]).uncorrelated()])
            .unwrap();
        assert_eq!(unc.n_theta(), 2);
    }
}

#[test]
fn design_errors_and_aliasing() {
    let (mut frame, _, _, _) = small_problem(1);
    assert!(matches!(
        build_design(&frame, &FixedSpec::new(["nope"]), &[]),
        Err(LmmError::UnknownColumn(c)) if c == "nope"
    ));
    assert!(matches!(
        build_design(&frame, &FixedSpec::new(["x1"]), &[RandomTerm::intercept("missing")]),
        Err(LmmError::UnknownColumn(_))
    ));
    frame.add_factor("one", vec!["a".to_string(); 10]).unwrap();
    assert!(matches!(
        build_design(&frame, &FixedSpec::new(["x1"]), &[RandomTerm::intercept("one")]),
        Err(LmmError::SingleLevel(g)) if g == "one"
    ));
    let doubled: Vec<f64> = frame.numeric("x1").unwrap().iter().map(|v| 2.0 * v + 1.0).collect();
    frame.add_numeric("x2", doubled).unwrap();
    let d = build_design(&frame, &FixedSpec::new(["x1", "x2"]), &[]).unwrap();
    assert_eq!(d.fixed_names, vec![INTERCEPT.to_string(), "x1".to_string()]);
    assert_eq!(d.dropped, vec!["x2".to_string()]);
    assert!(matches!(frame.add_numeric("short", vec![1.0]), Err(LmmError::Dimension(_))));
}

#[test]
fn deviance_matches_dense_marginal_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for seed in 0..10 {
        let (frame, fixed, random, y) = small_problem(seed);
        let d = build_design(&frame, &fixed, &random).unwrap();
        for _ in 0..5 {
            let theta: Vec<f64> = d
                .theta_lower_bounds()
                .iter()
                .map(|&lb| if lb == 0.0 { rng.random_range(0.05..2.0) } else { rng.random_range(-1.0..1.0) })
                .collect();
            for crit in [Criterion::Reml, Criterion::Ml] {
                let ours = profiled_deviance(&d, &y, &theta, crit).unwrap();
                let (oracle, _) = dense_deviance(&d, &y, &theta, crit);
                assert!((ours - oracle).abs() < 1e-8, "{crit:?}: {ours} vs {oracle}");
            }
        }
    }
}

#[test]
fn zero_theta_reduces_to_ols() {
    let (frame, fixed, random, y) = small_problem(4);
    let d = build_design(&frame, &fixed, &random).unwrap();
    let zero = vec![0.0; d.n_theta()];
    let ols = fit_ols(&d.x, &y).unwrap();
    let (n, p) = (d.n() as f64, d.p() as f64);
    let two_pi = 2.0 * std::f64::consts::PI;
    let ml = profiled_deviance(&d, &y, &zero, Criterion::Ml).unwrap();
    assert!((ml - n * (1.0 + (two_pi * ols.rss / n).ln())).abs() < 1e-10);
    let reml = profiled_deviance(&d, &y, &zero, Criterion::Reml).unwrap();
    assert!((reml - (n - p) * (1.0 + (two_pi * ols.rss / (n - p)).ln())).abs() < 1e-10);

    let profiler = Profiler::new(&d, &y).unwrap();
    let pinned = fit_at(&profiler, &zero, Criterion::Reml).unwrap();
    for (a, b) in pinned.beta.iter().zip(&ols.estimates) {
        assert!((a - b).abs() < 1e-8);
    }
    assert!((pinned.sigma2 - ols.sigma2).abs() < 1e-10);
    assert!(pinned.singular);
}

/// Balanced one-way layout with `groups x per` observations.
fn one_way(rng: &mut ChaCha8Rng, groups: usize, per: usize, sd_group: f64) -> (DesignMatrices, Vec<f64>) {
    let effects: Vec<f64> = (0..groups).map(|_| sd_group * normal(rng)).collect();
    let y: Vec<f64> = (0..groups * per).map(|i| 3.0 + effects[i / per] + normal(rng)).collect();
    let mut frame = ModelFrame::new();
    frame.add_factor("g", labels("g", (0..groups * per).map(|i| i / per))).unwrap();
    frame.add_numeric("y", y.clone()).unwrap();
    let d = build_design(&frame, &FixedSpec::new(Vec::<String>::new()), &[RandomTerm::intercept("g")]).unwrap();
    (d, y)
}

/// Closed-form REML variance components of the balanced one-way layout,
/// `(sigma_b^2, sigma^2)`, including the boundary branch.
pub(crate) fn anova_reml(y: &[f64], groups: usize, per: usize) -> (f64, f64) {
    let n = (groups * per) as f64;
    let grand = y.iter().sum::<f64>() / n;
    let means: Vec<f64> = (0..groups).map(|g| y[g * per..(g + 1) * per].iter().sum::<f64>() / per as f64).collect();
    let ssb: f64 = means.iter().map(|m| per as f64 * (m - grand).powi(2)).sum();
    let ssw: f64 = (0..groups * per).map(|i| (y[i] - means[i / per]).powi(2)).sum();
    let msb = ssb / (groups - 1) as f64;
    let msw = ssw / (groups * (per - 1)) as f64;
    if msb >= msw {
        ((msb - msw) / per as f64, msw)
    } else {
        (0.0, (ssb + ssw) / (n - 1.0))
    }
}

fn components(fit: &LmmFit) -> (f64, f64) {
    (fit.variance_components[0].value, fit.variance_components.last().unwrap().value)
}

#[test]
fn balanced_one_way_matches_anova() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut boundary = 0;
    for trial in 0..20 {
        let sd = [0.0, 0.3, 1.0, 2.0][trial % 4];
        let (d, y) = one_way(&mut rng, 4, 5, sd);
        let fit = fit_lmm(&d, &y, FitOptions { seed: trial as u64, ..Default::default() }).unwrap();
        let (sb, s) = anova_reml(&y, 4, 5);
        let (fb, fs) = components(&fit);
        assert!((fb - sb).abs() < 1e-6 * sb.max(1.0), "trial {trial}: {fb} vs {sb}");
        assert!((fs - s).abs() < 1e-6 * s.max(1.0), "trial {trial}: {fs} vs {s}");
        assert!(fit.converged);
        if sb == 0.0 {
            boundary += 1;
            assert!(fit.singular);
        }
    }
    assert!(boundary > 0, "no boundary case exercised");
}

#[test]
fn equal_group_means_give_singular_fit() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (d, mut y) = one_way(&mut rng, 5, 4, 1.0);
    for g in 0..5 {
        let m = y[g * 4..(g + 1) * 4].iter().sum::<f64>() / 4.0;
        y[g * 4..(g + 1) * 4].iter_mut().for_each(|v| *v -= m);
    }
    let fit = fit_lmm(&d, &y, FitOptions::default()).unwrap();
    assert!(fit.theta[0] < SINGULAR_TOL);
    assert!(fit.singular);
}

#[test]
fn beta_is_gls_at_fitted_theta_and_theta_is_locally_minimal() {
    for seed in 0..3 {
        let (frame, fixed, random, y) = small_problem(seed + 20);
        let d = build_design(&frame, &fixed, &random).unwrap();
        for crit in [Criterion::Reml, Criterion::Ml] {
            let fit = fit_lmm(&d, &y, FitOptions { criterion: crit, seed, ..Default::default() }).unwrap();
            let (_, gls) = dense_deviance(&d, &y, &fit.theta, crit);
            for (a, b) in fit.beta.iter().zip(gls.iter()) {
                assert!((a - b).abs() < 1e-8);
            }
            let lower = d.theta_lower_bounds();
            for i in 0..fit.theta.len() {
                for delta in [-1e-3, 1e-3] {
                    let mut t = fit.theta.clone();
                    t[i] = (t[i] + delta).max(lower[i]);
                    let dev = profiled_deviance(&d, &y, &t, crit).unwrap();
                    assert!(dev >= fit.deviance - 1e-9, "coordinate {i} {delta}: {dev} < {}", fit.deviance);
                }
            }
        }
    }
}

fn crossed_problem(seed: u64) -> ModelFrame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 120;
    let subj: Vec<f64> = (0..8).map(|_| 0.5 * normal(&mut rng)).collect();
    let slope: Vec<f64> = (0..8).map(|_| 0.2 * normal(&mut rng)).collect();
    let item: Vec<f64> = (0..15).map(|_| 0.4 * normal(&mut rng)).collect();
    let s: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..10.0)).collect();
    let y: Vec<f64> =
        (0..n).map(|i| 6.0 + (0.1 + slope[i % 8]) * s[i] + subj[i % 8] + item[i % 15] + 0.3 * normal(&mut rng)).collect();
    let mut frame = ModelFrame::new();
    frame.add_numeric("surprisal", s).unwrap();
    frame.add_numeric("y", y).unwrap();
    frame.add_factor("subject", labels("s", (0..n).map(|i| i % 8))).unwrap();
    frame.add_factor("item", labels("i", (0..n).map(|i| i % 15))).unwrap();
    frame
}

fn crossed_fit(frame: &ModelFrame, crit: Criterion) -> LmmFit {
    let d = build_design(
        frame,
        &FixedSpec::new(["surprisal"]),
        &[RandomTerm::with_slopes("subject", ["surprisal"]), RandomTerm::intercept("item")],
    )
    .unwrap();
    fit_lmm(&d, frame.numeric("y").unwrap(), FitOptions { criterion: crit, ..Default::default() }).unwrap()
}

#[test]
fn rescaling_surprisal_leaves_likelihood_unchanged() {
    let frame = crossed_problem(3);
    for crit in [Criterion::Reml, Criterion::Ml] {
        let base = crossed_fit(&frame, crit);
        for (c, shift) in [(std::f64::consts::LN_2, 0.0), (1.0 / std::f64::consts::LN_2, 0.0), (3.0, -7.5)] {
            let mut scaled = frame.clone();
            scaled.numeric_mut("surprisal").unwrap().iter_mut().for_each(|v| *v = c * *v + shift);
            let fit = crossed_fit(&scaled, crit);
            assert!((fit.loglik - base.loglik).abs() < 1e-6, "{crit:?} c={c}: {} vs {}", fit.loglik, base.loglik);
            assert!((fit.aic - base.aic).abs() < 1e-6);
            let (b0, b1) = (base.coefficient("surprisal").unwrap(), fit.coefficient("surprisal").unwrap());
            assert!((b1 - b0 / c).abs() < 1e-6 * b0.abs().max(1.0));
        }
    }
}

#[test]
fn row_order_does_not_matter() {
    let frame = crossed_problem(11);
    let base = crossed_fit(&frame, Criterion::Reml);
    let mut order: Vec<usize> = (0..frame.nrows()).collect();
    order.reverse();
    order.swap(3, 40);
    let fit = crossed_fit(&frame.permuted(&order), Criterion::Reml);
    assert!((fit.loglik - base.loglik).abs() < 1e-8);
    for (a, b) in fit.beta.iter().zip(&base.beta) {
        assert!((a - b).abs() < 1e-6);
    }
    for (a, b) in fit.theta.iter().zip(&base.theta) {
        assert!((a - b).abs() < 1e-4);
    }
}

#[test]
fn independent_copy_doubles_ml_deviance_and_keeps_argmin() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (d, y) = one_way(&mut rng, 4, 5, 1.0);
    let labels_a: Vec<String> = labels("g", (0..20).map(|i| i / 5));
    let labels_b: Vec<String> = labels("h", (0..20).map(|i| i / 5));
    let mut frame = ModelFrame::new();
    frame.add_factor("g", labels_a.into_iter().chain(labels_b).collect()).unwrap();
    let yy: Vec<f64> = y.iter().chain(&y).copied().collect();
    frame.add_numeric("y", yy.clone()).unwrap();
    let dd = build_design(&frame, &FixedSpec::new(Vec::<String>::new()), &[RandomTerm::intercept("g")]).unwrap();
    for theta in [0.0, 0.4, 1.3] {
        let a = profiled_deviance(&d, &y, &[theta], Criterion::Ml).unwrap();
        let b = profiled_deviance(&dd, &yy, &[theta], Criterion::Ml).unwrap();
        assert!((b - 2.0 * a).abs() < 1e-9);
    }
    let opts = FitOptions { criterion: Criterion::Ml, ..Default::default() };
    let f1 = fit_lmm(&d, &y, opts).unwrap();
    let f2 = fit_lmm(&dd, &yy, opts).unwrap();
    assert!((f1.theta[0] - f2.theta[0]).abs() < 1e-6);
}

#[test]
fn aic_arithmetic() {
    assert_eq!(aic_value(-100.0, 5), 210.0);
    let frame = crossed_problem(2);
    let a = crossed_fit(&frame, Criterion::Ml);
    let mut permuted = frame.clone();
    permuted.numeric_mut("surprisal").unwrap().rotate_left(7);
    let b = crossed_fit(&permuted, Criterion::Ml);
    assert_eq!(a.k, b.k);
    assert_eq!(a.k, 2 + 4 + 1);
    assert!(((a.aic - b.aic) - 2.0 * (b.loglik - a.loglik)).abs() < 1e-9);
    assert_eq!(aic(&a), a.aic);
}

#[test]
fn report_lists_every_component() {
    let fit = crossed_fit(&crossed_problem(5), Criterion::Reml);
    let r = fit.report();
    assert!(r.contains("criterion\tREML"));
    assert!(r.contains("beta\tsurprisal\t"));
    assert!(r.contains("vc\tsubject\tvar((Intercept))"));
    assert!(r.contains("vc\tsubject\tcor((Intercept),surprisal)"));
    assert!(r.contains("vc\titem\tvar((Intercept))"));
    assert!(r.contains("vc\tResidual\tvar"));
    assert!(r.contains("aic\t"));
}

#[test]
fn fits_are_deterministic() {
    let frame = crossed_problem(9);
    assert_eq!(crossed_fit(&frame, Criterion::Reml), crossed_fit(&frame, Criterion::Reml));
}
