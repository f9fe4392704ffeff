//! Multivariate analysis of variance on pseudo-unit mean trajectories.
//!
//! Each `(experimental unit, group)` pair contributes one response vector:
//! its mean at every time. Between-unit terms are tested on the full vectors,
//! time and its interactions on successive differences of the coordinates.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use nalgebra::{DMatrix, SymmetricEigen};
#[allow(unused_imports)] // unused when std is in the build graph
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::data::{build_design, DesignMatrices, Factor, LongDataset, Observation, Term, TIME};
use crate::grouping::PseudoUnitAssignment;
use crate::linalg::{chol_upper, solve_upper_mat, solve_upper_transpose_mat};
use crate::special::f_sf;
use crate::{Error, Result};

/// Mean trajectory of every `(eu, group)` pair, rows ordered by eu then group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManovaResponses {
    pub factors: Vec<Factor>,
    pub eu: Vec<String>,
    pub group: Vec<usize>,
    /// Factor levels of each row.
    pub levels: Vec<Vec<usize>>,
    /// `y[row][time - 1]`.
    pub y: Vec<Vec<f64>>,
    /// Observations averaged into each coordinate.
    pub counts: Vec<Vec<usize>>,
}

impl ManovaResponses {
    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn times(&self) -> usize {
        self.y.first().map_or(0, Vec::len)
    }

    fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_rows(), self.times(), |i, k| self.y[i][k])
    }

    /// Row index of `(eu index, group)` in a dataset with `g` groups.
    pub(crate) fn row_of(eu: usize, group: usize, g: usize) -> usize {
        eu * g + group - 1
    }

    /// One synthetic observation per row so that the between-unit design can
    /// be built with the ordinary encoder.
    fn between_design(&self, terms: &[Term]) -> Result<DesignMatrices> {
        let rows = (0..self.n_rows())
            .map(|i| Observation {
                eu: self.eu[i].clone(),
                obs: Some(format!("{}", self.group[i])),
                time: 1,
                rep: 1,
                levels: self.levels[i].clone(),
                y: 0.0,
            })
            .collect();
        let ds = LongDataset::new(self.factors.clone(), rows)?;
        build_design(&ds, terms, &[], None)
    }
}

/// Averages every `(eu, group, time)` cell.
pub fn build_manova_responses(ds: &LongDataset, pa: &PseudoUnitAssignment) -> Result<ManovaResponses> {
    if pa.groups.len() != ds.len() {
        return Err(Error::Invalid(format!(
            "grouping covers {} of {} observations",
            pa.groups.len(),
            ds.len()
        )));
    }
    let t = ds.times() as usize;
    let g = pa.g;
    let n_rows = ds.n_eu() * g;
    let mut sums = vec![vec![0.0; t]; n_rows];
    let mut counts = vec![vec![0usize; t]; n_rows];
    let mut levels: Vec<Option<Vec<usize>>> = vec![None; n_rows];
    for (i, o) in ds.observations().iter().enumerate() {
        let r = pa.groups[i];
        if r == 0 || r > g {
            return Err(Error::Invalid(format!("observation {i} has no valid group")));
        }
        let row = ManovaResponses::row_of(ds.eu_index()[i], r, g);
        match &levels[row] {
            Some(l) if *l != o.levels => {
                return Err(Error::Invalid(format!(
                    "factor levels vary inside (eu {}, group {r})",
                    o.eu
                )))
            }
            Some(_) => {}
            None => levels[row] = Some(o.levels.clone()),
        }
        let k = (o.time - 1) as usize;
        sums[row][k] += o.y;
        counts[row][k] += 1;
    }
    let mut eu = Vec::with_capacity(n_rows);
    let mut group = Vec::with_capacity(n_rows);
    for e in 0..ds.n_eu() {
        for r in 1..=g {
            let row = ManovaResponses::row_of(e, r, g);
            if let Some(k) = counts[row].iter().position(|&c| c == 0) {
                return Err(Error::EmptyCell(format!(
                    "eu {}, group {r}, time {}",
                    ds.eu_ids()[e],
                    k + 1
                )));
            }
            eu.push(ds.eu_ids()[e].clone());
            group.push(r);
        }
    }
    let y = sums
        .iter()
        .zip(&counts)
        .map(|(s, c)| s.iter().zip(c).map(|(v, &n)| v / n as f64).collect())
        .collect();
    Ok(ManovaResponses {
        factors: ds.factors().to_vec(),
        eu,
        group,
        levels: levels.into_iter().map(|l| l.unwrap_or_default()).collect(),
        y,
        counts,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ManovaHypothesis {
    /// A between-unit term on the full trajectories.
    Between(Term),
    /// The interaction of a between-unit term with time.
    TimeInteraction(Term),
    /// Flat mean trajectory.
    Time,
}

impl fmt::Display for ManovaHypothesis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ManovaHypothesis::Between(t) => write!(f, "{t}"),
            ManovaHypothesis::TimeInteraction(t) => write!(f, "{t}:{TIME}"),
            ManovaHypothesis::Time => f.write_str(TIME),
        }
    }
}

/// Splits a model formula into the between-unit terms of the multivariate
/// model and the hypotheses it supports, in formula order.
pub fn hypotheses_for(formula: &[Term]) -> (Vec<Term>, Vec<ManovaHypothesis>) {
    let mut between: Vec<Term> = Vec::new();
    let mut hyps = Vec::new();
    for term in formula {
        if term.0.is_empty() {
            continue;
        }
        if term.involves_time() {
            let rest: Vec<String> = term.0.iter().filter(|f| *f != TIME).cloned().collect();
            if rest.is_empty() {
                hyps.push(ManovaHypothesis::Time);
            } else {
                let rest = Term(rest);
                if !between.contains(&rest) {
                    between.push(rest.clone());
                }
                hyps.push(ManovaHypothesis::TimeInteraction(rest));
            }
        } else {
            if !between.contains(term) {
                between.push(term.clone());
            }
            hyps.push(ManovaHypothesis::Between(term.clone()));
        }
    }
    (between, hyps)
}

/// One of the four classical statistics with its F approximation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultivariateTest {
    pub statistic: f64,
    pub approx_f: f64,
    pub num_df: f64,
    pub den_df: f64,
    pub p: f64,
}

impl MultivariateTest {
    fn new(statistic: f64, approx_f: f64, num_df: f64, den_df: f64) -> Self {
        let p = if approx_f.is_infinite() {
            0.0
        } else if num_df > 0.0 && den_df > 0.0 {
            f_sf(approx_f.max(0.0), num_df, den_df)
        } else {
            f64::NAN
        };
        MultivariateTest {
            statistic,
            approx_f,
            num_df,
            den_df,
            p,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManovaStatistics {
    pub pillai: MultivariateTest,
    pub wilks: MultivariateTest,
    pub hotelling_lawley: MultivariateTest,
    /// The statistic is `λ₁/(1 + λ₁)`; the F value is an upper bound.
    pub roy: MultivariateTest,
}

impl ManovaStatistics {
    /// Statistics from the eigenvalues of `Qe⁻¹Qh` for `p = eig.len()`
    /// response coordinates, `q` hypothesis and `df_res` error degrees of freedom.
    pub fn from_eigenvalues(eig: &[f64], q: usize, df_res: usize) -> Self {
        let p = eig.len() as f64;
        let q = q as f64;
        let df_res = df_res as f64;
        let s = p.min(q);
        let m = 0.5 * ((p - q).abs() - 1.0);
        let n = 0.5 * (df_res - p - 1.0);

        let v: f64 = eig.iter().map(|l| l / (1.0 + l)).sum();
        let f_v = if s - v > 0.0 {
            (2.0 * n + s + 1.0) / (2.0 * m + s + 1.0) * v / (s - v)
        } else {
            f64::INFINITY
        };
        let pillai = MultivariateTest::new(v, f_v, s * (2.0 * m + s + 1.0), s * (2.0 * n + s + 1.0));

        let lambda: f64 = eig.iter().map(|l| 1.0 / (1.0 + l)).product();
        let w1 = df_res - 0.5 * (p - q + 1.0);
        let w2 = (p * q - 2.0) / 4.0;
        let w3 = p * p + q * q - 5.0;
        let w3 = if w3 > 0.0 { ((p * q).powi(2) - 4.0).sqrt() / w3.sqrt() } else { 1.0 };
        let den = w1 * w3 - 2.0 * w2;
        let f_w = if lambda > 0.0 {
            (lambda.powf(-1.0 / w3) - 1.0) * den / p / q
        } else {
            f64::INFINITY
        };
        let wilks = MultivariateTest::new(lambda, f_w, p * q, den);

        let u: f64 = eig.iter().sum();
        let h1 = 2.0 * m + s + 1.0;
        let h2 = 2.0 * (s * n + 1.0);
        let hotelling_lawley = MultivariateTest::new(u, h2 * u / s / s / h1, s * h1, h2);

        let l1 = eig.iter().copied().fold(0.0, f64::max);
        let r1 = p.max(q);
        let r2 = df_res - r1 + q;
        let mut roy = MultivariateTest::new(l1, r2 * l1 / r1, r1, r2);
        roy.statistic = l1 / (1.0 + l1);
        ManovaStatistics {
            pillai,
            wilks,
            hotelling_lawley,
            roy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManovaResult {
    pub hypothesis: ManovaHypothesis,
    /// Hypothesis degrees of freedom.
    pub df: usize,
    pub error_df: usize,
    /// Row-major hypothesis and error SSCP matrices.
    pub qh: Vec<Vec<f64>>,
    pub qe: Vec<Vec<f64>>,
    /// Eigenvalues of `Qe⁻¹Qh`, descending.
    pub eigenvalues: Vec<f64>,
    pub statistics: ManovaStatistics,
}

impl ManovaResult {
    pub fn label(&self) -> String {
        self.hypothesis.to_string()
    }

    /// `term,df,pillai,approxF,numdf,dendf,p` line without the header.
    pub fn csv_line(&self) -> String {
        let s = &self.statistics.pillai;
        format!(
            "{},{},{},{},{},{},{}",
            self.label(),
            self.df,
            s.statistic,
            s.approx_f,
            s.num_df,
            s.den_df,
            s.p
        )
    }
}

pub const MANOVA_CSV_HEADER: &str = "term,df,pillai,approxF,numdf,dendf,p";

/// Residual SSCP `Yᵀ(I − H)Y` of the columns `keep` of `x`.
fn residual_sscp(x: &DMatrix<f64>, keep: &[usize], y: &DMatrix<f64>) -> Result<(DMatrix<f64>, usize)> {
    let xs = x.select_columns(keep);
    let r = chol_upper(&(xs.transpose() * &xs), 1e-11)?;
    let coef = solve_upper_mat(&r, &solve_upper_transpose_mat(&r, &(xs.transpose() * y)));
    let e = y - &xs * coef;
    Ok((e.transpose() * e, x.nrows() - keep.len()))
}

/// Columns `[1, -1]` on consecutive coordinates.
fn differences(t: usize) -> DMatrix<f64> {
    DMatrix::from_fn(t, t - 1, |i, j| {
        if i == j + 1 {
            1.0
        } else if i == j {
            -1.0
        } else {
            0.0
        }
    })
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Tests one hypothesis in the multivariate linear model with the
/// between-unit `terms` (main effects and their products, intercept implied).
pub fn manova_test(mr: &ManovaResponses, terms: &[Term], hypothesis: &ManovaHypothesis) -> Result<ManovaResult> {
    if let Some(t) = terms.iter().find(|t| t.involves_time()) {
        return Err(Error::Invalid(format!("term `{t}` varies inside the response vector")));
    }
    let t = mr.times();
    if t < 2 && !matches!(hypothesis, ManovaHypothesis::Between(_)) {
        return Err(Error::Invalid("time hypotheses need at least 2 times".into()));
    }
    let dm = mr.between_design(terms)?;
    let all: Vec<usize> = (0..dm.n_fixed()).collect();
    let dropped: Vec<usize> = match hypothesis {
        ManovaHypothesis::Time => vec![0],
        ManovaHypothesis::Between(term) | ManovaHypothesis::TimeInteraction(term) => {
            let cols = dm
                .terms
                .iter()
                .find(|c| c.term == *term)
                .ok_or_else(|| Error::Invalid(format!("term `{term}` is not in the design")))?;
            (cols.start..cols.start + cols.len).collect()
        }
    };
    let keep: Vec<usize> = all.iter().copied().filter(|c| !dropped.contains(c)).collect();
    let mut y = mr.matrix();
    if !matches!(hypothesis, ManovaHypothesis::Between(_)) {
        y = y * differences(t);
    }
    let p = y.ncols();
    let (qe, df_res) = residual_sscp(&dm.x, &all, &y)?;
    if df_res < p {
        return Err(Error::Singular(format!("{df_res} error degrees of freedom for {p} responses")));
    }
    let (q_reduced, _) = residual_sscp(&dm.x, &keep, &y)?;
    let mut qh = q_reduced - &qe;
    qh = (&qh + qh.transpose()) * 0.5;

    let r = chol_upper(&qe, 1e-12).map_err(|_| Error::Singular("error SSCP matrix".into()))?;
    let a = solve_upper_transpose_mat(&r, &qh);
    let mut sym = solve_upper_transpose_mat(&r, &a.transpose());
    sym = (&sym + sym.transpose()) * 0.5;
    let mut eig: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    for l in &mut eig {
        if *l < 0.0 {
            if *l > -1e-10 {
                *l = 0.0;
            } else {
                return Err(Error::NegativeEigenvalue(*l));
            }
        }
    }
    eig.sort_by(|a, b| b.total_cmp(a));
    let df = dropped.len();
    Ok(ManovaResult {
        hypothesis: hypothesis.clone(),
        df,
        error_df: df_res,
        qh: rows_of(&qh),
        qe: rows_of(&qe),
        statistics: ManovaStatistics::from_eigenvalues(&eig, df, df_res),
        eigenvalues: eig,
    })
}

/// Runs every hypothesis a formula supports.
pub fn manova_all(mr: &ManovaResponses, formula: &[Term]) -> Result<Vec<ManovaResult>> {
    let (between, hyps) = hypotheses_for(formula);
    hyps.iter().map(|h| manova_test(mr, &between, h)).collect()
}

/// Predicted mean trajectory of every row under the between-unit model.
pub fn fitted_trajectories(mr: &ManovaResponses, terms: &[Term]) -> Result<Vec<Vec<f64>>> {
    let dm = mr.between_design(terms)?;
    let x = &dm.x;
    let y = mr.matrix();
    let r = chol_upper(&(x.transpose() * x), 1e-11)?;
    let coef = solve_upper_mat(&r, &solve_upper_transpose_mat(&r, &(x.transpose() * &y)));
    Ok(rows_of(&(x * coef)))
}

impl ManovaResponses {
    /// Fitted value of every observation of `ds`: its row's predicted mean at its time.
    pub fn observation_fitted(
        &self,
        ds: &LongDataset,
        pa: &PseudoUnitAssignment,
        trajectories: &[Vec<f64>],
    ) -> Vec<f64> {
        ds.observations()
            .iter()
            .enumerate()
            .map(|(i, o)| {
                let row = ManovaResponses::row_of(ds.eu_index()[i], pa.groups[i], pa.g);
                trajectories[row][(o.time - 1) as usize]
            })
            .collect()
    }
}

impl ManovaHypothesis {
    pub fn parse(label: &str) -> Result<Self> {
        let parts: Vec<&str> = label.split(':').map(str::trim).collect();
        if parts.iter().any(|p| p.is_empty()) {
            return Err(Error::Invalid(format!("bad term `{label}`")));
        }
        if parts == [TIME] {
            return Ok(ManovaHypothesis::Time);
        }
        let rest: Vec<String> = parts.iter().filter(|p| **p != TIME).map(|p| p.to_string()).collect();
        if rest.len() + 1 == parts.len() {
            Ok(ManovaHypothesis::TimeInteraction(Term(rest)))
        } else {
            Ok(ManovaHypothesis::Between(Term(rest)))
        }
    }
}
