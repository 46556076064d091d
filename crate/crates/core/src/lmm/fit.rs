use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optimize::{nelder_mead, newton_polish, Minimum};
use super::{Criterion, DesignMatrices, LmmError, Profiler};

/// Theta entries this close to their zero bound make a fit singular.
pub const SINGULAR_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub criterion: Criterion,
    /// Seeds the random restarts.
    pub seed: u64,
    pub restarts: usize,
    /// Convergence tolerance on the deviance for the simplex stage.
    pub ftol: f64,
    pub max_evals: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { criterion: Criterion::Reml, seed: 0, restarts: 3, ftol: 1e-8, max_evals: 20_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceComponent {
    pub term: String,
    /// `var(col)`, `cor(a,b)` or `var` for the residual.
    pub parameter: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmmFit {
    pub criterion: Criterion,
    pub fixed_names: Vec<String>,
    pub beta: Vec<f64>,
    pub beta_se: Vec<f64>,
    pub theta: Vec<f64>,
    pub theta_names: Vec<String>,
    pub sigma2: f64,
    pub deviance: f64,
    pub loglik: f64,
    pub aic: f64,
    pub converged: bool,
    pub singular: bool,
    pub n: usize,
    pub p: usize,
    pub k: usize,
    pub evaluations: usize,
    pub variance_components: Vec<VarianceComponent>,
    pub dropped: Vec<String>,
}

impl LmmFit {
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.fixed_names.iter().position(|n| n == name).map(|i| self.beta[i])
    }

    /// Tab-separated records: one per coefficient, variance component and
    /// summary quantity.
    pub fn report(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "criterion\t{}", self.criterion.as_str());
        let _ = writeln!(s, "n\t{}\np\t{}\nk\t{}", self.n, self.p, self.k);
        for ((name, b), se) in self.fixed_names.iter().zip(&self.beta).zip(&self.beta_se) {
            let _ = writeln!(s, "beta\t{name}\t{b:.10e}\t{se:.10e}");
        }
        for d in &self.dropped {
            let _ = writeln!(s, "dropped\t{d}");
        }
        for vc in &self.variance_components {
            let _ = writeln!(s, "vc\t{}\t{}\t{:.10e}", vc.term, vc.parameter, vc.value);
        }
        let _ = writeln!(s, "loglik\t{:.10e}\naic\t{:.10e}", self.loglik, self.aic);
        let _ = writeln!(s, "converged\t{}\nsingular\t{}", self.converged, self.singular);
        s
    }
}

/// `2k - 2 loglik`.
pub fn aic(fit: &LmmFit) -> f64 {
    aic_value(fit.loglik, fit.k)
}

pub fn aic_value(loglik: f64, k: usize) -> f64 {
    2.0 * k as f64 - 2.0 * loglik
}

fn random_start(design: &DesignMatrices, rng: &mut ChaCha8Rng) -> Vec<f64> {
    design
        .theta_lower_bounds()
        .iter()
        .map(|&lb| if lb == 0.0 { rng.random_range(0.2..2.0) } else { rng.random_range(-0.5..0.5) })
        .collect()
}

/// Minimizes the profiled deviance over theta: simplex searches from the
/// identity start and `restarts` seeded random starts, then a Newton polish
/// of the best.
pub fn fit_lmm(design: &DesignMatrices, y: &[f64], options: FitOptions) -> Result<LmmFit, LmmError> {
    let profiler = Profiler::new(design, y)?;
    let lower = design.theta_lower_bounds();
    let mut objective = |theta: &[f64]| {
        profiler.evaluate(theta, options.criterion).map(|p| p.deviance).unwrap_or(f64::INFINITY)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut starts = vec![design.default_theta()];
    if design.n_theta() > 0 {
        starts.extend((0..options.restarts).map(|_| random_start(design, &mut rng)));
    }
    let mut best: Option<Minimum> = None;
    let mut evaluations = 0;
    for s in &starts {
        let m = nelder_mead(&mut objective, s, &lower, options.ftol, options.max_evals);
        evaluations += m.evaluations;
        if best.as_ref().is_none_or(|b| m.f < b.f) {
            best = Some(m);
        }
    }
    let mut best = best.expect("at least one start");
    best.evaluations = 0;
    let polished = newton_polish(&mut objective, best, &lower, 150, 1e-9);
    evaluations += polished.evaluations;
    if !polished.f.is_finite() {
        return Err(LmmError::NonFinite("deviance at every start".into()));
    }
    let mut fit = fit_at(&profiler, &polished.x, options.criterion)?;
    fit.converged = polished.converged;
    fit.evaluations = evaluations;
    if !fit.converged {
        log::warn!("mixed model did not converge within {} deviance evaluations", evaluations);
    }
    Ok(fit)
}

/// Fit summary at a fixed theta (no optimization).
pub fn fit_at(profiler: &Profiler<'_>, theta: &[f64], criterion: Criterion) -> Result<LmmFit, LmmError> {
    let design = profiler.design();
    let prof = profiler.evaluate(theta, criterion)?;
    let p = design.p();
    let k = p + design.n_theta() + 1;
    let loglik = -prof.deviance / 2.0;
    let lower = design.theta_lower_bounds();
    let singular = theta.iter().zip(&lower).any(|(&t, &lb)| lb.is_finite() && t - lb < SINGULAR_TOL);

    let mut vcs = Vec::new();
    for (t, th) in design.terms.iter().zip(design.split_theta(theta)) {
        let f = t.factor(th);
        let cov = &f * f.transpose() * prof.sigma2;
        for i in 0..t.r() {
            vcs.push(VarianceComponent {
                term: t.group.clone(),
                parameter: format!("var({})", t.columns[i]),
                value: cov[(i, i)],
            });
        }
        if t.correlated {
            for j in 0..t.r() {
                for i in j + 1..t.r() {
                    let denom = (cov[(i, i)] * cov[(j, j)]).sqrt();
                    vcs.push(VarianceComponent {
                        term: t.group.clone(),
                        parameter: format!("cor({},{})", t.columns[j], t.columns[i]),
                        value: if denom > 0.0 { cov[(i, j)] / denom } else { 0.0 },
                    });
                }
            }
        }
    }
    vcs.push(VarianceComponent { term: "Residual".into(), parameter: "var".into(), value: prof.sigma2 });

    Ok(LmmFit {
        criterion,
        fixed_names: design.fixed_names.clone(),
        beta: prof.beta.iter().copied().collect(),
        beta_se: (0..p).map(|j| (prof.sigma2 * prof.beta_cov_unscaled[(j, j)]).sqrt()).collect(),
        theta: theta.to_vec(),
        theta_names: design.theta_names(),
        sigma2: prof.sigma2,
        deviance: prof.deviance,
        loglik,
        aic: aic_value(loglik, k),
        converged: true,
        singular,
        n: design.n(),
        p,
        k,
        evaluations: 1,
        variance_components: vcs,
        dropped: design.dropped.clone(),
    })
}
