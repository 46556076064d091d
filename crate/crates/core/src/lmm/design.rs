use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::LmmError;

pub const INTERCEPT: &str = "(Intercept)";

/// Named numeric and factor columns of equal length.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelFrame {
    nrows: Option<usize>,
    numeric: BTreeMap<String, Vec<f64>>,
    factors: BTreeMap<String, Vec<String>>,
}

impl ModelFrame {
    pub fn new() -> Self {
        Self::default()
    }

    fn check_len(&mut self, name: &str, len: usize) -> Result<(), LmmError> {
        match self.nrows {
            Some(n) if n != len => {
                Err(LmmError::Dimension(format!("column {name} has {len} rows, frame has {n}")))
            }
            _ => {
                self.nrows = Some(len);
                Ok(())
            }
        }
    }

    pub fn add_numeric(&mut self, name: impl Into<String>, values: Vec<f64>) -> Result<(), LmmError> {
        let name = name.into();
        self.check_len(&name, values.len())?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(LmmError::NonFinite(name));
        }
        self.numeric.insert(name, values);
        Ok(())
    }

    pub fn add_factor(&mut self, name: impl Into<String>, values: Vec<String>) -> Result<(), LmmError> {
        let name = name.into();
        self.check_len(&name, values.len())?;
        self.factors.insert(name, values);
        Ok(())
    }

    pub fn nrows(&self) -> usize {
        self.nrows.unwrap_or(0)
    }

    pub fn numeric(&self, name: &str) -> Option<&[f64]> {
        self.numeric.get(name).map(Vec::as_slice)
    }

    pub fn numeric_mut(&mut self, name: &str) -> Option<&mut Vec<f64>> {
        self.numeric.get_mut(name)
    }

    pub fn factor(&self, name: &str) -> Option<&[String]> {
        self.factors.get(name).map(Vec::as_slice)
    }

    /// Frame with rows reordered so that row `i` is old row `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            nrows: Some(order.len()),
            numeric: self.numeric.iter().map(|(k, v)| (k.clone(), order.iter().map(|&i| v[i]).collect())).collect(),
            factors: self
                .factors
                .iter()
                .map(|(k, v)| (k.clone(), order.iter().map(|&i| v[i].clone()).collect()))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedSpec {
    pub names: Vec<String>,
    pub intercept: bool,
}

impl FixedSpec {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Self {
        Self { names: names.into_iter().map(Into::into).collect(), intercept: true }
    }
}

/// `(1 + slopes | group)`, or `(1 + slopes || group)` when uncorrelated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RandomTerm {
    pub group: String,
    #[serde(default)]
    pub slopes: Vec<String>,
    #[serde(default = "default_correlated")]
    pub correlated: bool,
}

fn default_correlated() -> bool {
    true
}

impl RandomTerm {
    pub fn intercept(group: impl Into<String>) -> Self {
        Self { group: group.into(), slopes: Vec::new(), correlated: true }
    }

    pub fn with_slopes<S: Into<String>>(group: impl Into<String>, slopes: impl IntoIterator<Item = S>) -> Self {
        Self { group: group.into(), slopes: slopes.into_iter().map(Into::into).collect(), correlated: true }
    }

    pub fn uncorrelated(mut self) -> Self {
        self.correlated = false;
        self
    }

    /// Formula-style description, e.g. `(1 + baseline | subject)`.
    pub fn describe(&self) -> String {
        let mut lhs = String::from("1");
        for s in &self.slopes {
            lhs.push_str(" + ");
            lhs.push_str(s);
        }
        let bar = if self.correlated || self.slopes.is_empty() { "|" } else { "||" };
        format!("({lhs} {bar} {})", self.group)
    }

    /// Relative-covariance parameters this term contributes.
    pub fn n_theta(&self) -> usize {
        let r = 1 + self.slopes.len();
        if self.correlated {
            r * (r + 1) / 2
        } else {
            r
        }
    }
}

/// One random-effects term expanded against the data. Its `Z` block has
/// `levels.len() * r` columns, level-major: column `l * r + c` holds the
/// value of term column `c` on rows whose level is `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct TermBlock {
    pub group: String,
    /// `(Intercept)` followed by the slope names.
    pub columns: Vec<String>,
    pub correlated: bool,
    /// Sorted level labels.
    pub levels: Vec<String>,
    pub level_of_row: Vec<usize>,
    /// `values[c][i]`: term column `c` on row `i`.
    pub values: Vec<Vec<f64>>,
    /// First column of this block in `Z`.
    pub offset: usize,
}

impl TermBlock {
    pub fn r(&self) -> usize {
        self.columns.len()
    }

    pub fn width(&self) -> usize {
        self.levels.len() * self.r()
    }

    pub fn n_theta(&self) -> usize {
        let r = self.r();
        if self.correlated {
            r * (r + 1) / 2
        } else {
            r
        }
    }

    /// `(row, col)` of each theta entry in the `r x r` lower-triangular
    /// factor, column-major.
    pub fn theta_positions(&self) -> Vec<(usize, usize)> {
        let r = self.r();
        if self.correlated {
            (0..r).flat_map(|j| (j..r).map(move |i| (i, j))).collect()
        } else {
            (0..r).map(|i| (i, i)).collect()
        }
    }

    pub fn factor(&self, theta: &[f64]) -> DMatrix<f64> {
        let mut t = DMatrix::zeros(self.r(), self.r());
        for (&(i, j), &v) in self.theta_positions().iter().zip(theta) {
            t[(i, j)] = v;
        }
        t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrices {
    pub x: DMatrix<f64>,
    pub fixed_names: Vec<String>,
    /// Fixed-effect columns dropped as linear combinations of earlier ones.
    pub dropped: Vec<String>,
    pub terms: Vec<TermBlock>,
}

impl DesignMatrices {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn q(&self) -> usize {
        self.terms.iter().map(TermBlock::width).sum()
    }

    pub fn n_theta(&self) -> usize {
        self.terms.iter().map(TermBlock::n_theta).sum()
    }

    /// 0 for diagonal entries of each factor, unbounded otherwise.
    pub fn theta_lower_bounds(&self) -> Vec<f64> {
        self.terms
            .iter()
            .flat_map(|t| t.theta_positions().into_iter().map(|(i, j)| if i == j { 0.0 } else { f64::NEG_INFINITY }))
            .collect()
    }

    /// Identity factors: unit relative variances, zero correlations.
    pub fn default_theta(&self) -> Vec<f64> {
        self.theta_lower_bounds().iter().map(|&lb| if lb == 0.0 { 1.0 } else { 0.0 }).collect()
    }

    pub fn theta_names(&self) -> Vec<String> {
        self.terms
            .iter()
            .flat_map(|t| {
                t.theta_positions()
                    .into_iter()
                    .map(move |(i, j)| format!("{}[{},{}]", t.group, t.columns[i], t.columns[j]))
            })
            .collect()
    }

    /// Per-term slices of a full theta vector.
    pub fn split_theta<'a>(&self, theta: &'a [f64]) -> Vec<&'a [f64]> {
        let mut rest = theta;
        self.terms
            .iter()
            .map(|t| {
                let (head, tail) = rest.split_at(t.n_theta());
                rest = tail;
                head
            })
            .collect()
    }

    /// Dense `n x q` random-effects matrix.
    pub fn z_dense(&self) -> DMatrix<f64> {
        let mut z = DMatrix::zeros(self.n(), self.q());
        for t in &self.terms {
            for (i, &l) in t.level_of_row.iter().enumerate() {
                for c in 0..t.r() {
                    z[(i, t.offset + l * t.r() + c)] = t.values[c][i];
                }
            }
        }
        z
    }

    /// Dense relative covariance factor `Lambda` (`q x q`).
    pub fn lambda_dense(&self, theta: &[f64]) -> DMatrix<f64> {
        let mut lambda = DMatrix::zeros(self.q(), self.q());
        for (t, th) in self.terms.iter().zip(self.split_theta(theta)) {
            let f = t.factor(th);
            for l in 0..t.levels.len() {
                let o = t.offset + l * t.r();
                lambda.view_mut((o, o), (t.r(), t.r())).copy_from(&f);
            }
        }
        lambda
    }
}

/// Assembles `X` (intercept first, then `fixed.names` in order) and the
/// random-effects blocks (in term order).
pub fn build_design(frame: &ModelFrame, fixed: &FixedSpec, random: &[RandomTerm]) -> Result<DesignMatrices, LmmError> {
    let n = frame.nrows();
    let numeric = |name: &str| frame.numeric(name).ok_or_else(|| LmmError::UnknownColumn(name.to_string()));

    let mut names = Vec::new();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    if fixed.intercept {
        names.push(INTERCEPT.to_string());
        cols.push(vec![1.0; n]);
    }
    for name in &fixed.names {
        cols.push(numeric(name)?.to_vec());
        names.push(name.clone());
    }
    let (kept, dropped) = drop_aliased(&cols);
    let dropped: Vec<String> = dropped.into_iter().map(|j| names[j].clone()).collect();
    for d in &dropped {
        log::warn!("fixed effect {d} is aliased with earlier columns and was dropped");
    }
    let x = DMatrix::from_fn(n, kept.len(), |i, j| cols[kept[j]][i]);
    let fixed_names = kept.iter().map(|&j| names[j].clone()).collect();

    let mut terms = Vec::with_capacity(random.len());
    let mut offset = 0;
    for term in random {
        let labels = frame.factor(&term.group).ok_or_else(|| LmmError::UnknownColumn(term.group.clone()))?;
        let levels: Vec<String> = {
            let mut v: Vec<String> = labels.to_vec();
            v.sort();
            v.dedup();
            v
        };
        if levels.len() < 2 {
            return Err(LmmError::SingleLevel(term.group.clone()));
        }
        let index: BTreeMap<&str, usize> = levels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
        let level_of_row = labels.iter().map(|l| index[l.as_str()]).collect();
        let mut values = vec![vec![1.0; n]];
        let mut columns = vec![INTERCEPT.to_string()];
        for s in &term.slopes {
            values.push(numeric(s)?.to_vec());
            columns.push(s.clone());
        }
        let block = TermBlock {
            group: term.group.clone(),
            columns,
            correlated: term.correlated,
            levels,
            level_of_row,
            values,
            offset,
        };
        offset += block.width();
        terms.push(block);
    }
    Ok(DesignMatrices { x, fixed_names, dropped, terms })
}

/// Modified Gram-Schmidt pass keeping columns with a non-negligible
/// component orthogonal to the columns kept before them.
fn drop_aliased(cols: &[Vec<f64>]) -> (Vec<usize>, Vec<usize>) {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let (mut kept, mut dropped) = (Vec::new(), Vec::new());
    for (j, col) in cols.iter().enumerate() {
        let norm0 = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut v = col.clone();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(b).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm0 > 0.0 && norm > 1e-9 * norm0 {
            v.iter_mut().for_each(|a| *a /= norm);
            basis.push(v);
            kept.push(j);
        } else {
            dropped.push(j);
        }
    }
    (kept, dropped)
}
