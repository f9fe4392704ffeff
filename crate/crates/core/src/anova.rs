//! Balanced analysis-of-variance tables for the treatment × time layout.
//!
//! Three error structures share the treatment (`A`), time (`T`) and
//! interaction (`A:T`) sums of squares:
//!
//! - `fixed`: a single error stratum,
//! - `deaton`: cell means per (experimental unit, time), a split plot with
//!   experimental units as whole plots,
//! - `proposed`: experimental units, pseudo-units nested in them, and the
//!   residual.
//!
//! Sums of squares are always on the observation scale: the cell-mean table
//! weights each mean by its cell size, so the shared rows coincide across the
//! three tables and the F statistics are unaffected.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

#[allow(unused_imports)] // unused when std is in the build graph
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::data::{LongDataset, TREATMENT};
use crate::grouping::PseudoUnitAssignment;
use crate::special::f_sf;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AnovaModel {
    Fixed,
    Deaton,
    Proposed,
}

impl fmt::Display for AnovaModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AnovaModel::Fixed => "fixed",
            AnovaModel::Deaton => "deaton",
            AnovaModel::Proposed => "proposed",
        })
    }
}

/// The three null hypotheses of the treatment × time layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Hypothesis {
    /// H1: no treatment × time interaction.
    Interaction = 1,
    /// H2: no treatment effect.
    Treatment = 2,
    /// H3: no time effect.
    Time = 3,
}

impl Hypothesis {
    pub const ALL: [Hypothesis; 3] = [Hypothesis::Interaction, Hypothesis::Treatment, Hypothesis::Time];

    pub fn from_index(i: u8) -> Option<Hypothesis> {
        match i {
            1 => Some(Hypothesis::Interaction),
            2 => Some(Hypothesis::Treatment),
            3 => Some(Hypothesis::Time),
            _ => None,
        }
    }

    pub fn index(self) -> u8 {
        self as u8
    }

    /// Table row carrying the test.
    pub fn source(self) -> &'static str {
        match self {
            Hypothesis::Interaction => "A:T",
            Hypothesis::Treatment => "A",
            Hypothesis::Time => "T",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaRow {
    pub source: String,
    pub df: usize,
    pub ss: f64,
    /// `ss / df`; `None` when `df = 0`.
    pub ms: Option<f64>,
    /// Expected mean square.
    pub ems: String,
    pub f: Option<f64>,
    pub p: Option<f64>,
    /// Source whose mean square is the F denominator.
    pub denominator: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaTable {
    pub model: AnovaModel,
    /// Sources followed by the residual row.
    pub rows: Vec<AnovaRow>,
    pub total_df: usize,
    pub total_ss: f64,
}

impl AnovaTable {
    pub fn row(&self, source: &str) -> Option<&AnovaRow> {
        self.rows.iter().find(|r| r.source == source)
    }

    pub fn p_value(&self, h: Hypothesis) -> Option<f64> {
        self.row(h.source()).and_then(|r| r.p)
    }

    pub fn f_value(&self, h: Hypothesis) -> Option<f64> {
        self.row(h.source()).and_then(|r| r.f)
    }

    /// `source,df,ss,ms,f,p` with a closing `Total` line; empty fields for missing values.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        let mut out = String::from("source,df,ss,ms,f,p\n");
        for r in &self.rows {
            out += &format!("{},{},{},{},{},{}\n", r.source, r.df, r.ss, opt(r.ms), opt(r.f), opt(r.p));
        }
        out += &format!("Total,{},{},,,\n", self.total_df, self.total_ss);
        out
    }
}

impl fmt::Display for AnovaTable {
    /// Aligned plain-text rendering.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let num = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
        let pval = |v: Option<f64>| v.map(|x| format!("{x:.4e}")).unwrap_or_default();
        writeln!(f, "ANOVA ({} model)", self.model)?;
        writeln!(
            f,
            "{:<10} {:>7} {:>16} {:>14} {:>12} {:>12}  {}",
            "Source", "Df", "Sum Sq", "Mean Sq", "F", "Pr(>F)", "E(MS)"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<10} {:>7} {:>16.4} {:>14} {:>12} {:>12}  {}",
                r.source,
                r.df,
                r.ss,
                num(r.ms),
                num(r.f),
                pval(r.p),
                r.ems
            )?;
        }
        writeln!(f, "{:<10} {:>7} {:>16.4}", "Total", self.total_df, self.total_ss)
    }
}

/// Balanced treatment × time layout.
struct Layout {
    m: usize,
    t: usize,
    /// Experimental units per treatment (0 when not required).
    n: usize,
    /// Observations per (experimental unit, time) (0 when not required).
    c: usize,
    treat: Vec<usize>,
    time: Vec<usize>,
    y: Vec<f64>,
    grand: f64,
    mean_m: Vec<f64>,
    mean_k: Vec<f64>,
    mean_mk: Vec<Vec<f64>>,
    /// Observations per (treatment, time) cell.
    r: usize,
}

fn treatment_index(ds: &LongDataset) -> Result<usize> {
    match ds.factor_index(TREATMENT) {
        Some(f) => Ok(f),
        None if ds.factors().len() == 1 => Ok(0),
        None => Err(Error::UnknownFactor(TREATMENT.to_string())),
    }
}

impl Layout {
    fn new(ds: &LongDataset) -> Result<Self> {
        let f = treatment_index(ds)?;
        let m = ds.factors()[f].n_levels();
        let t = ds.times() as usize;
        if m < 2 || t < 2 {
            return Err(Error::Invalid(format!("need at least 2 treatments and 2 times, got {m} and {t}")));
        }
        let treat: Vec<usize> = ds.observations().iter().map(|o| o.levels[f]).collect();
        let time: Vec<usize> = ds.observations().iter().map(|o| (o.time - 1) as usize).collect();
        let y = ds.responses();
        let mut count_mk = vec![vec![0usize; t]; m];
        let mut sum_mk = vec![vec![0.0; t]; m];
        for i in 0..y.len() {
            count_mk[treat[i]][time[i]] += 1;
            sum_mk[treat[i]][time[i]] += y[i];
        }
        let r = count_mk[0][0];
        if r == 0 || count_mk.iter().flatten().any(|&c| c != r) {
            return Err(Error::Unbalanced("treatment × time cells have unequal counts".into()));
        }
        let mean_mk: Vec<Vec<f64>> = sum_mk.iter().map(|row| row.iter().map(|s| s / r as f64).collect()).collect();
        let mean_m: Vec<f64> = sum_mk.iter().map(|row| row.iter().sum::<f64>() / (r * t) as f64).collect();
        let mean_k: Vec<f64> = (0..t)
            .map(|k| (0..m).map(|i| sum_mk[i][k]).sum::<f64>() / (r * m) as f64)
            .collect();
        let grand = mean_m.iter().sum::<f64>() / m as f64;
        Ok(Layout {
            m,
            t,
            n: 0,
            c: 0,
            treat,
            time,
            y,
            grand,
            mean_m,
            mean_k,
            mean_mk,
            r,
        })
    }

    /// Adds the experimental-unit structure: one treatment per unit, `n`
    /// units per treatment, `c` observations in every (unit, time) cell.
    fn with_units(ds: &LongDataset) -> Result<(Self, Vec<usize>)> {
        let mut lay = Self::new(ds)?;
        let eu = ds.eu_index();
        let n_eu = ds.n_eu();
        let mut treat_of = vec![usize::MAX; n_eu];
        let mut cell = vec![vec![0usize; lay.t]; n_eu];
        for i in 0..lay.y.len() {
            let e = eu[i];
            if treat_of[e] != usize::MAX && treat_of[e] != lay.treat[i] {
                return Err(Error::Invalid(format!("experimental unit {} spans several treatments", ds.eu_ids()[e])));
            }
            treat_of[e] = lay.treat[i];
            cell[e][lay.time[i]] += 1;
        }
        let c = cell[0][0];
        if c == 0 || cell.iter().flatten().any(|&v| v != c) {
            return Err(Error::Unbalanced("(experimental unit, time) cells have unequal counts".into()));
        }
        let mut per_treat = vec![0usize; lay.m];
        for &m in &treat_of {
            per_treat[m] += 1;
        }
        let n = per_treat[0];
        if per_treat.iter().any(|&v| v != n) {
            return Err(Error::Unbalanced("treatments have different numbers of experimental units".into()));
        }
        lay.n = n;
        lay.c = c;
        Ok((lay, treat_of))
    }

    fn ss_a(&self) -> f64 {
        (self.r * self.t) as f64 * self.mean_m.iter().map(|v| (v - self.grand).powi(2)).sum::<f64>()
    }

    fn ss_t(&self) -> f64 {
        (self.r * self.m) as f64 * self.mean_k.iter().map(|v| (v - self.grand).powi(2)).sum::<f64>()
    }

    fn ss_at(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.m {
            for k in 0..self.t {
                s += (self.mean_mk[i][k] - self.mean_m[i] - self.mean_k[k] + self.grand).powi(2);
            }
        }
        self.r as f64 * s
    }

    fn ss_total(&self) -> f64 {
        self.y.iter().map(|v| (v - self.grand).powi(2)).sum()
    }
}

fn row(source: &str, df: usize, ss: f64, ems: String) -> AnovaRow {
    AnovaRow {
        source: source.into(),
        df,
        ss,
        ms: (df > 0).then(|| ss / df as f64),
        ems,
        f: None,
        p: None,
        denominator: None,
    }
}

/// F test of row `num` against row `den`. `0/0` is reported as `F = 0, p = 1`.
fn test(rows: &mut [AnovaRow], num: &str, den: &str) -> Result<()> {
    let d = rows.iter().find(|r| r.source == den).expect("denominator row");
    let (ms_d, df_d) = (d.ms, d.df);
    let r = rows.iter_mut().find(|r| r.source == num).expect("numerator row");
    let (Some(ms_n), Some(ms_d)) = (r.ms, ms_d) else {
        return Err(Error::ZeroDf(if r.df == 0 { r.source.clone() } else { den.to_string() }));
    };
    let scale = ms_n.abs().max(ms_d.abs());
    let (f, p) = if scale == 0.0 || ms_n <= 1e-14 * scale && ms_d <= 1e-14 * scale {
        (0.0, 1.0)
    } else if ms_d <= 0.0 {
        (f64::INFINITY, 0.0)
    } else {
        let f = ms_n / ms_d;
        (f, f_sf(f, r.df as f64, df_d as f64))
    };
    r.f = Some(f);
    r.p = Some(p);
    r.denominator = Some(den.to_string());
    Ok(())
}

fn require_df(rows: &[AnovaRow]) -> Result<()> {
    match rows.iter().find(|r| r.df == 0) {
        Some(r) => Err(Error::ZeroDf(r.source.clone())),
        None => Ok(()),
    }
}

const RESIDUAL: &str = "Residuals";

/// Single error stratum: every effect is tested against the residual mean square.
pub fn anova_fixed(ds: &LongDataset) -> Result<AnovaTable> {
    let lay = Layout::new(ds)?;
    let (m, t, r) = (lay.m, lay.t, lay.r);
    let n_obs = lay.y.len();
    let sse: f64 = (0..n_obs)
        .map(|i| (lay.y[i] - lay.mean_mk[lay.treat[i]][lay.time[i]]).powi(2))
        .sum();
    let mut rows = vec![
        row("A", m - 1, lay.ss_a(), format!("σ²ε + {}·ΣA²/{}", r * t, m - 1)),
        row("T", t - 1, lay.ss_t(), format!("σ²ε + {}·ΣT²/{}", r * m, t - 1)),
        row(
            "A:T",
            (m - 1) * (t - 1),
            lay.ss_at(),
            format!("σ²ε + {}·ΣAT²/{}", r, (m - 1) * (t - 1)),
        ),
        row(RESIDUAL, n_obs - m * t, sse, "σ²ε".into()),
    ];
    require_df(&rows)?;
    for src in ["A", "T", "A:T"] {
        test(&mut rows, src, RESIDUAL)?;
    }
    Ok(AnovaTable {
        model: AnovaModel::Fixed,
        rows,
        total_df: n_obs - 1,
        total_ss: lay.ss_total(),
    })
}

/// Split plot on the (experimental unit, time) cell means: the treatment is
/// tested against units within treatments, everything else against the
/// residual of the cell means.
pub fn anova_deaton(ds: &LongDataset) -> Result<AnovaTable> {
    let (lay, treat_of) = Layout::with_units(ds)?;
    let (m, t, n, c) = (lay.m, lay.t, lay.n, lay.c);
    if n < 2 {
        return Err(Error::ZeroDf("b(A)".into()));
    }
    let n_eu = treat_of.len();
    let eu = ds.eu_index();
    let mut cell = vec![vec![0.0; t]; n_eu];
    for i in 0..lay.y.len() {
        cell[eu[i]][lay.time[i]] += lay.y[i] / c as f64;
    }
    let eu_mean: Vec<f64> = cell.iter().map(|row| row.iter().sum::<f64>() / t as f64).collect();
    let w = c as f64;
    let mut ss_b = 0.0;
    let mut sse = 0.0;
    let mut total = 0.0;
    for e in 0..n_eu {
        let tr = treat_of[e];
        ss_b += w * t as f64 * (eu_mean[e] - lay.mean_m[tr]).powi(2);
        for k in 0..t {
            sse += w * (cell[e][k] - eu_mean[e] - lay.mean_mk[tr][k] + lay.mean_m[tr]).powi(2);
            total += w * (cell[e][k] - lay.grand).powi(2);
        }
    }
    let mut rows = vec![
        row(
            "A",
            m - 1,
            lay.ss_a(),
            format!("{c}·(σ²ε̄ + {t}·σ²b + {}·ΣA²/{})", n * t, m - 1),
        ),
        row("b(A)", m * (n - 1), ss_b, format!("{c}·(σ²ε̄ + {t}·σ²b)")),
        row("T", t - 1, lay.ss_t(), format!("{c}·(σ²ε̄ + {}·ΣT²/{})", m * n, t - 1)),
        row(
            "A:T",
            (m - 1) * (t - 1),
            lay.ss_at(),
            format!("{c}·(σ²ε̄ + {n}·ΣAT²/{})", (m - 1) * (t - 1)),
        ),
        row(RESIDUAL, m * (n - 1) * (t - 1), sse, format!("{c}·σ²ε̄")),
    ];
    require_df(&rows)?;
    test(&mut rows, "A", "b(A)")?;
    test(&mut rows, "b(A)", RESIDUAL)?;
    test(&mut rows, "T", RESIDUAL)?;
    test(&mut rows, "A:T", RESIDUAL)?;
    Ok(AnovaTable {
        model: AnovaModel::Deaton,
        rows,
        total_df: m * n * t - 1,
        total_ss: total,
    })
}

/// Experimental units and pseudo-units nested in them as error strata.
///
/// Needs equal group sizes in every (experimental unit, time) cell. The
/// treatment is tested against units, units against pseudo-units,
/// pseudo-units, time and interaction against the residual.
pub fn anova_proposed(ds: &LongDataset, pa: &PseudoUnitAssignment) -> Result<AnovaTable> {
    let (lay, treat_of) = Layout::with_units(ds)?;
    let (m, t, n, c) = (lay.m, lay.t, lay.n, lay.c);
    let g = pa.g;
    if pa.groups.len() != lay.y.len() {
        return Err(Error::Invalid(format!(
            "grouping covers {} of {} observations",
            pa.groups.len(),
            lay.y.len()
        )));
    }
    if g == 0 || c % g != 0 {
        return Err(Error::Unbalanced(format!("{c} observations per cell cannot form {g} equal groups")));
    }
    let per = c / g;
    let n_eu = treat_of.len();
    let eu = ds.eu_index();
    let mut counts = vec![vec![vec![0usize; t]; g]; n_eu];
    let mut group_sum = vec![vec![0.0; g]; n_eu];
    let mut eu_sum = vec![0.0; n_eu];
    for i in 0..lay.y.len() {
        let r = pa.groups[i];
        if r == 0 || r > g {
            return Err(Error::Invalid(format!("observation {i} has no valid group")));
        }
        counts[eu[i]][r - 1][lay.time[i]] += 1;
        group_sum[eu[i]][r - 1] += lay.y[i];
        eu_sum[eu[i]] += lay.y[i];
    }
    if counts.iter().flatten().flatten().any(|&v| v != per) {
        return Err(Error::Unbalanced("pseudo-units differ in size".into()));
    }
    let eu_mean: Vec<f64> = eu_sum.iter().map(|s| s / (t * c) as f64).collect();
    let group_mean: Vec<Vec<f64>> = group_sum
        .iter()
        .map(|row| row.iter().map(|s| s / (t * per) as f64).collect())
        .collect();
    let mut ss_b = 0.0;
    let mut ss_eta = 0.0;
    for e in 0..n_eu {
        ss_b += (t * c) as f64 * (eu_mean[e] - lay.mean_m[treat_of[e]]).powi(2);
        for r in 0..g {
            ss_eta += (t * per) as f64 * (group_mean[e][r] - eu_mean[e]).powi(2);
        }
    }
    let sse: f64 = (0..lay.y.len())
        .map(|i| {
            let (e, tr, k) = (eu[i], lay.treat[i], lay.time[i]);
            (lay.y[i] - group_mean[e][pa.groups[i] - 1] - lay.mean_mk[tr][k] + lay.mean_m[tr]).powi(2)
        })
        .sum();
    let n_obs = lay.y.len();
    let df_used = n * m * g + m * (t - 1);
    if n_obs <= df_used {
        return Err(Error::ZeroDf(RESIDUAL.into()));
    }
    let eta = format!("{}·σ²η'", t * per);
    let mut rows = vec![
        row(
            "A",
            m - 1,
            lay.ss_a(),
            format!("σ²ε + {eta} + {}·σ²b + {}·ΣA²/{}", t * c, n * t * c, m - 1),
        ),
        row("b(A)", m * (n - 1), ss_b, format!("σ²ε + {eta} + {}·σ²b", t * c)),
        row("eta(b)", n * m * (g - 1), ss_eta, format!("σ²ε + {eta}")),
        row("T", t - 1, lay.ss_t(), format!("σ²ε + {}·ΣT²/{}", lay.r * m, t - 1)),
        row(
            "A:T",
            (m - 1) * (t - 1),
            lay.ss_at(),
            format!("σ²ε + {}·ΣAT²/{}", lay.r, (m - 1) * (t - 1)),
        ),
        row(RESIDUAL, n_obs - df_used, sse, "σ²ε".into()),
    ];
    require_df(&rows)?;
    test(&mut rows, "A", "b(A)")?;
    test(&mut rows, "b(A)", "eta(b)")?;
    test(&mut rows, "eta(b)", RESIDUAL)?;
    test(&mut rows, "T", RESIDUAL)?;
    test(&mut rows, "A:T", RESIDUAL)?;
    Ok(AnovaTable {
        model: AnovaModel::Proposed,
        rows,
        total_df: n_obs - 1,
        total_ss: lay.ss_total(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Factor, Observation};

    /// M = 2, t = 2, one eu per treatment, two observations per cell:
    /// cell means (0, 2, 4, 6) with ±1 inside each cell.
    fn toy() -> LongDataset {
        let mut rows = Vec::new();
        for (a, eu) in [(0usize, "1"), (1, "2")] {
            for k in 0..2u32 {
                let mean = (2 * (2 * a as u32 + k)) as f64;
                for (j, d) in [-1.0, 1.0].iter().enumerate() {
                    rows.push(Observation {
                        eu: eu.into(),
                        obs: Some(format!("{k}-{j}")),
                        time: k + 1,
                        rep: 1,
                        levels: vec![a],
                        y: mean + d,
                    });
                }
            }
        }
        LongDataset::new(vec![Factor::new("A", vec!["1".into(), "2".into()])], rows).unwrap()
    }

    #[test]
    fn fixed_toy_by_hand() {
        let tab = anova_fixed(&toy()).unwrap();
        let ss = |s: &str| tab.row(s).unwrap().ss;
        assert!((ss("A") - 32.0).abs() < 1e-12);
        assert!((ss("T") - 8.0).abs() < 1e-12);
        assert!(ss("A:T").abs() < 1e-12);
        assert!((ss(RESIDUAL) - 8.0).abs() < 1e-12);
        assert!((tab.f_value(Hypothesis::Treatment).unwrap() - 16.0).abs() < 1e-12);
        assert!((tab.f_value(Hypothesis::Time).unwrap() - 4.0).abs() < 1e-12);
        assert!(tab.f_value(Hypothesis::Interaction).unwrap().abs() < 1e-12);
        assert_eq!(tab.total_df, 7);
    }

    #[test]
    fn constant_response_gives_unit_p() {
        let ds = toy();
        let flat = ds.with_responses(&vec![3.0; ds.len()]).unwrap();
        let tab = anova_fixed(&flat).unwrap();
        for h in Hypothesis::ALL {
            assert_eq!(tab.f_value(h), Some(0.0));
            assert_eq!(tab.p_value(h), Some(1.0));
        }
    }

    #[test]
    fn deaton_needs_two_units_per_treatment() {
        assert_eq!(anova_deaton(&toy()).unwrap_err(), Error::ZeroDf("b(A)".into()));
    }

    #[test]
    fn csv_layout() {
        let csv = anova_fixed(&toy()).unwrap().to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "source,df,ss,ms,f,p");
        assert!(lines[1].starts_with("A,1,32,32,16,"));
        assert!(lines.last().unwrap().starts_with("Total,7,"));
    }
}
