//! Long-format datasets and the sum-to-zero design encoding shared by every model.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::grouping::PseudoUnitAssignment;
use crate::{linalg, Error, Result};

/// Name under which the time index enters model terms.
pub const TIME: &str = "T";

/// Default name of the treatment factor in the canonical A×T layout.
pub const TREATMENT: &str = "A";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Factor {
    pub name: String,
    pub levels: Vec<String>,
}

impl Factor {
    pub fn new(name: impl Into<String>, levels: Vec<String>) -> Self {
        Factor {
            name: name.into(),
            levels,
        }
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }
}

/// One response measurement.
///
/// `levels[f]` indexes `factors[f].levels` of the owning dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub eu: String,
    pub obs: Option<String>,
    pub time: u32,
    pub rep: u32,
    pub levels: Vec<usize>,
    pub y: f64,
}

impl Observation {
    pub fn obs_id(&self) -> &str {
        self.obs.as_deref().unwrap_or("")
    }
}

/// Validated long-format dataset. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongDataset {
    factors: Vec<Factor>,
    observations: Vec<Observation>,
    t: u32,
    balanced: bool,
    eu_ids: Vec<String>,
    eu_of: Vec<usize>,
}

/// Orders identifiers numerically when both parse as integers.
pub fn natural_cmp(a: &str, b: &str) -> Ordering {
    match (a.parse::<i64>(), b.parse::<i64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y).then_with(|| a.cmp(b)),
        _ => a.cmp(b),
    }
}

impl LongDataset {
    /// Validates the observations and fills synthetic `obs` identifiers
    /// (`eu:time:row`) where they are missing.
    pub fn new(factors: Vec<Factor>, mut observations: Vec<Observation>) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::Invalid("dataset has no observations".into()));
        }
        let mut names = BTreeSet::new();
        for f in &factors {
            if f.name == TIME || !names.insert(f.name.clone()) {
                return Err(Error::Invalid(format!("factor name `{}` is reserved or repeated", f.name)));
            }
            if f.levels.is_empty() {
                return Err(Error::Invalid(format!("factor `{}` has no levels", f.name)));
            }
        }
        let mut t = 0u32;
        let mut times = BTreeSet::new();
        for (row, o) in observations.iter_mut().enumerate() {
            if o.eu.is_empty() {
                return Err(Error::Invalid(format!("observation {row}: empty eu identifier")));
            }
            if !o.y.is_finite() {
                return Err(Error::Invalid(format!("observation {row}: non-finite response")));
            }
            if o.time == 0 {
                return Err(Error::Invalid(format!("observation {row}: time index must start at 1")));
            }
            if o.levels.len() != factors.len() {
                return Err(Error::Invalid(format!(
                    "observation {row}: {} factor levels for {} factors",
                    o.levels.len(),
                    factors.len()
                )));
            }
            for (f, &l) in factors.iter().zip(&o.levels) {
                if l >= f.n_levels() {
                    return Err(Error::Invalid(format!(
                        "observation {row}: level {l} not defined for factor `{}`",
                        f.name
                    )));
                }
            }
            match &o.obs {
                Some(id) if id.is_empty() => {
                    return Err(Error::Invalid(format!("observation {row}: empty obs identifier")))
                }
                Some(_) => {}
                None => o.obs = Some(format!("{}:{}:{}", o.eu, o.time, row)),
            }
            t = t.max(o.time);
            times.insert(o.time);
        }
        if times.len() != t as usize {
            return Err(Error::Invalid(format!("time indices must be 1..{t} without gaps")));
        }
        let mut keys = BTreeSet::new();
        for (row, o) in observations.iter().enumerate() {
            if !keys.insert((o.eu.as_str(), o.obs_id(), o.time, o.rep)) {
                return Err(Error::DuplicateKey { row });
            }
        }

        let mut eu_ids: Vec<String> = observations
            .iter()
            .map(|o| o.eu.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        eu_ids.sort_by(|a, b| natural_cmp(a, b));
        let lookup: BTreeMap<&str, usize> = eu_ids.iter().enumerate().map(|(i, e)| (e.as_str(), i)).collect();
        let eu_of = observations.iter().map(|o| lookup[o.eu.as_str()]).collect();

        let balanced = Self::compute_balanced(&factors, &observations, t);
        Ok(LongDataset {
            factors,
            observations,
            t,
            balanced,
            eu_ids,
            eu_of,
        })
    }

    fn compute_balanced(factors: &[Factor], observations: &[Observation], t: u32) -> bool {
        let mut counts: BTreeMap<(&[usize], u32), usize> = BTreeMap::new();
        for o in observations {
            *counts.entry((o.levels.as_slice(), o.time)).or_default() += 1;
        }
        let cells: usize = factors.iter().map(Factor::n_levels).product::<usize>() * t as usize;
        let mut values = counts.values();
        let first = values.next().copied().unwrap_or(0);
        counts.len() == cells && values.all(|&c| c == first)
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Number of times `t`.
    pub fn times(&self) -> u32 {
        self.t
    }

    /// Equal observation counts in every factor-cell × time combination.
    pub fn is_balanced(&self) -> bool {
        self.balanced
    }

    /// Distinct experimental-unit identifiers in natural order.
    pub fn eu_ids(&self) -> &[String] {
        &self.eu_ids
    }

    pub fn n_eu(&self) -> usize {
        self.eu_ids.len()
    }

    /// Experimental-unit column index of every observation.
    pub fn eu_index(&self) -> &[usize] {
        &self.eu_of
    }

    pub fn responses(&self) -> Vec<f64> {
        self.observations.iter().map(|o| o.y).collect()
    }

    pub fn factor_index(&self, name: &str) -> Option<usize> {
        self.factors.iter().position(|f| f.name == name)
    }

    /// Same design with the responses replaced.
    pub fn with_responses(&self, y: &[f64]) -> Result<LongDataset> {
        if y.len() != self.len() {
            return Err(Error::Shape(format!("{} responses for {} observations", y.len(), self.len())));
        }
        if let Some(row) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("observation {row}: non-finite response")));
        }
        let mut out = self.clone();
        for (o, &v) in out.observations.iter_mut().zip(y) {
            o.y = v;
        }
        Ok(out)
    }

    /// Checks that each `(eu, obs)` pair is measured at a single time.
    pub fn check_destructive(&self) -> Result<()> {
        let mut seen: BTreeMap<(&str, &str), u32> = BTreeMap::new();
        for o in &self.observations {
            match seen.insert((o.eu.as_str(), o.obs_id()), o.time) {
                Some(prev) if prev != o.time => {
                    return Err(Error::ObservedTwice {
                        eu: o.eu.clone(),
                        obs: o.obs_id().to_string(),
                    })
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Level of factor `f` (or the time index for [`TIME`]) for every row.
    pub(crate) fn level_column(&self, name: &str) -> Result<(Vec<usize>, usize)> {
        if name == TIME {
            let col = self.observations.iter().map(|o| (o.time - 1) as usize).collect();
            return Ok((col, self.t as usize));
        }
        let f = self.factor_index(name).ok_or_else(|| Error::UnknownFactor(name.to_string()))?;
        let col = self.observations.iter().map(|o| o.levels[f]).collect();
        Ok((col, self.factors[f].n_levels()))
    }

    /// Row indices of every `(eu, time)` cell, indexed `[eu][time - 1]`.
    pub fn cells(&self) -> Vec<Vec<Vec<usize>>> {
        let mut cells = vec![vec![Vec::new(); self.t as usize]; self.n_eu()];
        for (row, o) in self.observations.iter().enumerate() {
            cells[self.eu_of[row]][(o.time - 1) as usize].push(row);
        }
        cells
    }

    /// Averages every `(eu, time)` cell into one row (the pseudo-panel of cell means).
    ///
    /// Returns the averaged dataset and, for each original row, the index of
    /// its averaged row. Factor levels must be constant within each cell.
    pub fn average_cells(&self) -> Result<(LongDataset, Vec<usize>)> {
        let cells = self.cells();
        let mut rows = Vec::new();
        let mut map = vec![usize::MAX; self.len()];
        for (e, per_time) in cells.iter().enumerate() {
            for (k, idx) in per_time.iter().enumerate() {
                if idx.is_empty() {
                    continue;
                }
                let levels = self.observations[idx[0]].levels.clone();
                if idx.iter().any(|&r| self.observations[r].levels != levels) {
                    return Err(Error::Invalid(format!(
                        "factor levels vary inside cell (eu {}, time {})",
                        self.eu_ids[e],
                        k + 1
                    )));
                }
                let y = idx.iter().map(|&r| self.observations[r].y).sum::<f64>() / idx.len() as f64;
                for &r in idx {
                    map[r] = rows.len();
                }
                rows.push(Observation {
                    eu: self.eu_ids[e].clone(),
                    obs: Some(format!("{}", k + 1)),
                    time: (k + 1) as u32,
                    rep: 1,
                    levels,
                    y,
                });
            }
        }
        Ok((LongDataset::new(self.factors.clone(), rows)?, map))
    }
}

/// A fixed-effect term: a product of factors, `T` standing for time.
/// The empty term is the intercept.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Term(pub Vec<String>);

impl Term {
    pub fn new<S: AsRef<str>>(factors: &[S]) -> Self {
        Term(factors.iter().map(|s| s.as_ref().to_string()).collect())
    }

    /// `A`, `T`, `A:T`.
    pub fn canonical() -> Vec<Term> {
        vec![Term::new(&[TREATMENT]), Term::new(&[TIME]), Term::new(&[TREATMENT, TIME])]
    }

    /// Parses `A+T+A:T`; `1` alone means intercept only.
    pub fn parse_formula(s: &str) -> Result<Vec<Term>> {
        let s = s.trim();
        if s == "1" || s.is_empty() {
            return Ok(Vec::new());
        }
        s.split('+')
            .map(|part| {
                let factors: Vec<&str> = part.split(':').map(str::trim).collect();
                if factors.iter().any(|f| f.is_empty()) {
                    return Err(Error::Invalid(format!("malformed term `{part}`")));
                }
                Ok(Term::new(&factors))
            })
            .collect()
    }

    pub fn involves_time(&self) -> bool {
        self.0.iter().any(|f| f == TIME)
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("(Intercept)");
        }
        f.write_str(&self.0.join(":"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RandomTerm {
    /// Intercept per experimental unit, `b_i`.
    ExperimentalUnit,
    /// Intercept per pseudo-observational unit within its experimental unit, `η_r(i)`.
    PseudoUnit,
}

/// Columns of `X` belonging to one fixed term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermColumns {
    pub term: Term,
    pub start: usize,
    pub len: usize,
    /// Number of levels of each factor of the term.
    pub dims: Vec<usize>,
}

/// Indicator structure of one random-effect term, stored sparsely.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomBlock {
    pub term: RandomTerm,
    /// Column (level) of every observation.
    pub index: Vec<usize>,
    pub labels: Vec<String>,
}

impl RandomBlock {
    pub fn n_levels(&self) -> usize {
        self.labels.len()
    }

    pub fn dense(&self) -> DMatrix<f64> {
        let mut z = DMatrix::zeros(self.index.len(), self.n_levels());
        for (row, &c) in self.index.iter().enumerate() {
            z[(row, c)] = 1.0;
        }
        z
    }
}

/// Full effects of one term decoded from the coefficient vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectTable {
    pub term: Term,
    pub dims: Vec<usize>,
    /// Row-major over level combinations (first factor slowest).
    pub values: Vec<f64>,
}

impl EffectTable {
    pub fn get(&self, levels: &[usize]) -> f64 {
        self.values[flat_index(&self.dims, levels)]
    }
}

fn flat_index(dims: &[usize], levels: &[usize]) -> usize {
    levels.iter().zip(dims).fold(0, |acc, (&l, &d)| acc * d + l)
}

fn unflatten(dims: &[usize], mut flat: usize) -> Vec<usize> {
    let mut out = vec![0; dims.len()];
    for i in (0..dims.len()).rev() {
        out[i] = flat % dims[i];
        flat /= dims[i];
    }
    out
}

/// Sum-to-zero code of `level` in column `col` for a factor with `n` levels.
fn effect_code(level: usize, col: usize, n: usize) -> f64 {
    if level == n - 1 {
        -1.0
    } else if level == col {
        1.0
    } else {
        0.0
    }
}

/// Fixed and random design of a model fitted to a [`LongDataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrices {
    pub x: DMatrix<f64>,
    pub terms: Vec<TermColumns>,
    pub random: Vec<RandomBlock>,
    pub balanced: bool,
}

impl DesignMatrices {
    pub fn n_obs(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_fixed(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_random(&self) -> usize {
        self.random.iter().map(RandomBlock::n_levels).sum()
    }

    pub fn block(&self, term: RandomTerm) -> Option<&RandomBlock> {
        self.random.iter().find(|b| b.term == term)
    }

    /// Dense experimental-unit indicator matrix (`Zb`).
    pub fn zb(&self) -> DMatrix<f64> {
        self.block(RandomTerm::ExperimentalUnit)
            .map(RandomBlock::dense)
            .unwrap_or_else(|| DMatrix::zeros(self.n_obs(), 0))
    }

    /// Dense pseudo-unit indicator matrix; zero columns without a grouping.
    pub fn zeta(&self) -> DMatrix<f64> {
        self.block(RandomTerm::PseudoUnit)
            .map(RandomBlock::dense)
            .unwrap_or_else(|| DMatrix::zeros(self.n_obs(), 0))
    }

    /// All random-effect columns, blocks concatenated in order.
    pub fn z(&self) -> DMatrix<f64> {
        let mut z = DMatrix::zeros(self.n_obs(), self.n_random());
        let mut offset = 0;
        for b in &self.random {
            for (row, &c) in b.index.iter().enumerate() {
                z[(row, offset + c)] = 1.0;
            }
            offset += b.n_levels();
        }
        z
    }

    /// Copy keeping only the listed random terms.
    pub fn with_random(&self, keep: &[RandomTerm]) -> DesignMatrices {
        DesignMatrices {
            x: self.x.clone(),
            terms: self.terms.clone(),
            random: self.random.iter().filter(|b| keep.contains(&b.term)).cloned().collect(),
            balanced: self.balanced,
        }
    }

    /// Full effect tables (including the intercept as a 0-dimensional table).
    pub fn decode(&self, beta: &[f64]) -> Result<Vec<EffectTable>> {
        if beta.len() != self.n_fixed() {
            return Err(Error::Shape(format!("{} coefficients for {} columns", beta.len(), self.n_fixed())));
        }
        let mut out = Vec::with_capacity(self.terms.len());
        for tc in &self.terms {
            let coded: Vec<usize> = tc.dims.iter().map(|d| d - 1).collect();
            let cells: usize = tc.dims.iter().product();
            let mut values = vec![0.0; cells];
            for (cell, v) in values.iter_mut().enumerate() {
                let levels = unflatten(&tc.dims, cell);
                for c in 0..tc.len {
                    let cols = unflatten(&coded, c);
                    let w: f64 = levels
                        .iter()
                        .zip(&cols)
                        .zip(&tc.dims)
                        .map(|((&l, &k), &n)| effect_code(l, k, n))
                        .product();
                    *v += w * beta[tc.start + c];
                }
            }
            out.push(EffectTable {
                term: tc.term.clone(),
                dims: tc.dims.clone(),
                values,
            });
        }
        Ok(out)
    }

    /// Inverse of [`DesignMatrices::decode`] on the sum-to-zero effect space.
    pub fn encode(&self, effects: &[EffectTable]) -> Result<Vec<f64>> {
        let mut beta = vec![0.0; self.n_fixed()];
        for tc in &self.terms {
            let table = effects
                .iter()
                .find(|e| e.term == tc.term)
                .ok_or_else(|| Error::Invalid(format!("no effects supplied for term {}", tc.term)))?;
            let coded: Vec<usize> = tc.dims.iter().map(|d| d - 1).collect();
            for c in 0..tc.len {
                beta[tc.start + c] = table.get(&unflatten(&coded, c));
            }
        }
        Ok(beta)
    }
}

/// Builds the sum-to-zero coded fixed-effects matrix and the random indicators.
///
/// The intercept is always included. `grouping` is required for
/// [`RandomTerm::PseudoUnit`].
pub fn build_design(
    ds: &LongDataset,
    fixed: &[Term],
    random: &[RandomTerm],
    grouping: Option<&PseudoUnitAssignment>,
) -> Result<DesignMatrices> {
    let n = ds.len();
    let mut columns: Vec<Vec<f64>> = vec![vec![1.0; n]];
    let mut terms = vec![TermColumns {
        term: Term(Vec::new()),
        start: 0,
        len: 1,
        dims: Vec::new(),
    }];
    for term in fixed {
        if term.0.is_empty() {
            continue;
        }
        let mut levels = Vec::with_capacity(term.0.len());
        let mut dims = Vec::with_capacity(term.0.len());
        for name in &term.0 {
            let (col, d) = ds.level_column(name)?;
            levels.push(col);
            dims.push(d);
        }
        let coded: Vec<usize> = dims.iter().map(|d| d - 1).collect();
        let len: usize = coded.iter().product();
        let start = columns.len();
        for c in 0..len {
            let cols = unflatten(&coded, c);
            let column = (0..n)
                .map(|row| {
                    levels
                        .iter()
                        .zip(&cols)
                        .zip(&dims)
                        .map(|((lv, &k), &d)| effect_code(lv[row], k, d))
                        .product()
                })
                .collect();
            columns.push(column);
        }
        terms.push(TermColumns {
            term: term.clone(),
            start,
            len,
            dims,
        });
    }
    let p = columns.len();
    let x = DMatrix::from_fn(n, p, |r, c| columns[c][r]);
    let xtx = x.transpose() * &x;
    linalg::chol_upper(&xtx, 1e-10)?;

    let mut blocks = Vec::new();
    for &term in random {
        match term {
            RandomTerm::ExperimentalUnit => blocks.push(RandomBlock {
                term,
                index: ds.eu_index().to_vec(),
                labels: ds.eu_ids().to_vec(),
            }),
            RandomTerm::PseudoUnit => {
                let pa = grouping.ok_or_else(|| Error::Invalid("pseudo-unit term requires a grouping".into()))?;
                if pa.groups.len() != n {
                    return Err(Error::Invalid(format!(
                        "grouping covers {} of {} observations",
                        pa.groups.len(),
                        n
                    )));
                }
                let g = pa.g;
                let mut index = Vec::with_capacity(n);
                for (row, &r) in pa.groups.iter().enumerate() {
                    if r == 0 || r > g {
                        return Err(Error::Invalid(format!("observation {row} has no valid group")));
                    }
                    index.push(ds.eu_index()[row] * g + (r - 1));
                }
                let labels = ds
                    .eu_ids()
                    .iter()
                    .flat_map(|e| (1..=g).map(move |r| format!("{e}:{r}")))
                    .collect();
                blocks.push(RandomBlock { term, index, labels });
            }
        }
    }
    Ok(DesignMatrices {
        x,
        terms,
        random: blocks,
        balanced: ds.is_balanced(),
    })
}
