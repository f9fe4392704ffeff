//! Residual and random-effect checks: correlograms of pseudo-unit residual
//! series, Anderson-Darling normality and Bartlett homoscedasticity.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // unused when std is in the build graph
use num_traits::Float;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{LongDataset, RandomTerm};
use crate::grouping::PseudoUnitAssignment;
use crate::lmm::FittedLmm;
use crate::rng::stream;
use crate::special::{chi2_sf, mean, normal_cdf, variance};
use crate::{Error, Result};

const BINS_STREAM: u64 = 0x4249_4e53;

/// Sample autocorrelations of one `(eu, group)` residual series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcfResult {
    pub eu: String,
    pub group: usize,
    /// `acf[h - 1]` is the autocorrelation at lag `h`.
    pub acf: Vec<f64>,
    /// Half-width of the white-noise band, `1.96/√len`.
    pub band: f64,
}

impl AcfResult {
    pub fn inside(&self) -> usize {
        self.acf.iter().filter(|r| r.abs() <= self.band).count()
    }
}

/// `min(len − 1, ⌊10·log10 len⌋)`.
pub fn default_max_lag(len: usize) -> usize {
    let by_log = (10.0 * (len as f64).log10()).floor() as usize;
    len.saturating_sub(1).min(by_log)
}

/// Autocorrelations at lags `1..=max_lag` with the biased (divide by `n`)
/// autocovariance. A constant series has all autocorrelations 0.
pub fn acf(series: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let n = series.len();
    if n < 2 {
        return Err(Error::Invalid(format!("series of length {n} is too short")));
    }
    let m = mean(series);
    let c0: f64 = series.iter().map(|x| (x - m) * (x - m)).sum();
    let scale = series.iter().fold(0.0_f64, |a, x| a.max(x.abs())).max(m.abs());
    let constant = c0 <= 1e-24 * scale * scale * n as f64;
    Ok((1..=max_lag.min(n - 1))
        .map(|h| {
            if constant {
                0.0
            } else {
                let ch: f64 = (0..n - h).map(|i| (series[i] - m) * (series[i + h] - m)).sum();
                ch / c0
            }
        })
        .collect())
}

/// Mean residual at every time for each `(eu, group)` pair, then its
/// correlogram. `max_lag` defaults to [`default_max_lag`] of the series length.
pub fn residual_acf(
    residuals: &[f64],
    ds: &LongDataset,
    pa: &PseudoUnitAssignment,
    max_lag: Option<usize>,
) -> Result<Vec<AcfResult>> {
    if residuals.len() != ds.len() || pa.groups.len() != ds.len() {
        return Err(Error::Shape(format!(
            "{} residuals and {} group labels for {} observations",
            residuals.len(),
            pa.groups.len(),
            ds.len()
        )));
    }
    let t = ds.times() as usize;
    let g = pa.g;
    let mut sums = vec![vec![0.0; t]; ds.n_eu() * g];
    let mut counts = vec![vec![0usize; t]; ds.n_eu() * g];
    for (i, o) in ds.observations().iter().enumerate() {
        let r = pa.groups[i];
        if r == 0 || r > g {
            return Err(Error::Invalid(format!("observation {i} has no valid group")));
        }
        let row = ds.eu_index()[i] * g + r - 1;
        sums[row][(o.time - 1) as usize] += residuals[i];
        counts[row][(o.time - 1) as usize] += 1;
    }
    let mut out = Vec::with_capacity(sums.len());
    for e in 0..ds.n_eu() {
        for r in 1..=g {
            let row = e * g + r - 1;
            let series: Vec<f64> = sums[row]
                .iter()
                .zip(&counts[row])
                .filter(|(_, &c)| c > 0)
                .map(|(s, &c)| s / c as f64)
                .collect();
            let lag = max_lag.unwrap_or_else(|| default_max_lag(series.len()));
            out.push(AcfResult {
                eu: ds.eu_ids()[e].clone(),
                group: r,
                acf: acf(&series, lag)?,
                band: 1.96 / (series.len() as f64).sqrt(),
            });
        }
    }
    Ok(out)
}

/// Share of `(series, lag)` autocorrelations inside their band.
pub fn fraction_inside(results: &[AcfResult]) -> f64 {
    let total: usize = results.iter().map(|r| r.acf.len()).sum();
    if total == 0 {
        return 1.0;
    }
    results.iter().map(AcfResult::inside).sum::<usize>() as f64 / total as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub name: String,
    pub statistic: f64,
    pub p: f64,
    pub n: usize,
}

/// Anderson-Darling normality test with mean and variance estimated.
///
/// Reports the adjusted `A*² = A²(1 + 0.75/n + 2.25/n²)` and the
/// D'Agostino-Stephens p-value. Needs `n ≥ 8`.
pub fn anderson_darling(sample: &[f64]) -> Result<TestResult> {
    let n = sample.len();
    if n < 8 {
        return Err(Error::Invalid(format!("Anderson-Darling needs at least 8 values, got {n}")));
    }
    if sample.iter().any(|x| !x.is_finite()) {
        return Err(Error::Invalid("non-finite value in sample".into()));
    }
    let m = mean(sample);
    let sd = variance(sample).sqrt();
    if !(sd > 1e-12 * m.abs().max(f64::MIN_POSITIVE)) {
        return Err(Error::ZeroVariance("Anderson-Darling sample".into()));
    }
    let mut z: Vec<f64> = sample.iter().map(|x| (x - m) / sd).collect();
    z.sort_by(f64::total_cmp);
    let nf = n as f64;
    let tiny = f64::MIN_POSITIVE;
    let s: f64 = (0..n)
        .map(|i| {
            let lo = normal_cdf(z[i]).max(tiny).ln();
            let hi = normal_cdf(-z[n - 1 - i]).max(tiny).ln();
            (2.0 * i as f64 + 1.0) * (lo + hi)
        })
        .sum();
    let a2 = -nf - s / nf;
    let a = a2 * (1.0 + 0.75 / nf + 2.25 / (nf * nf));
    let p = if a >= 0.6 {
        (1.2937 - 5.709 * a + 0.0186 * a * a).exp()
    } else if a >= 0.34 {
        (0.9177 - 4.279 * a - 1.38 * a * a).exp()
    } else if a >= 0.2 {
        1.0 - (-8.318 + 42.796 * a - 59.938 * a * a).exp()
    } else {
        1.0 - (-13.436 + 101.14 * a - 223.73 * a * a).exp()
    };
    Ok(TestResult {
        name: "Anderson-Darling".into(),
        statistic: a,
        p: p.clamp(0.0, 1.0),
        n,
    })
}

/// Bartlett's test of equal variances across groups.
pub fn bartlett(groups: &[Vec<f64>]) -> Result<TestResult> {
    let k = groups.len();
    if k < 2 {
        return Err(Error::Invalid(format!("Bartlett needs at least 2 groups, got {k}")));
    }
    let mut n_total = 0usize;
    let mut pooled = 0.0;
    let mut log_sum = 0.0;
    let mut inv_sum = 0.0;
    for (i, g) in groups.iter().enumerate() {
        if g.len() < 2 {
            return Err(Error::Invalid(format!("group {} has fewer than 2 values", i + 1)));
        }
        let v = variance(g);
        if !(v > 0.0) {
            return Err(Error::ZeroVariance(format!("group {}", i + 1)));
        }
        let df = (g.len() - 1) as f64;
        n_total += g.len();
        pooled += df * v;
        log_sum += df * v.ln();
        inv_sum += 1.0 / df;
    }
    let df_within = (n_total - k) as f64;
    let sp = pooled / df_within;
    let c = 1.0 + (inv_sum - 1.0 / df_within) / (3.0 * (k as f64 - 1.0));
    let stat = ((df_within * sp.ln() - log_sum) / c).max(0.0);
    Ok(TestResult {
        name: "Bartlett".into(),
        statistic: stat,
        p: chi2_sf(stat, (k - 1) as f64),
        n: n_total,
    })
}

/// Deals the values into `bins` bins after a seeded shuffle.
pub fn random_bins(values: &[f64], bins: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.shuffle(&mut stream(seed, &[BINS_STREAM]));
    let mut out = vec![Vec::new(); bins.max(1)];
    for (pos, &i) in idx.iter().enumerate() {
        let b = pos % out.len();
        out[b].push(values[i]);
    }
    out
}

/// Normality and homoscedasticity of one component of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentTests {
    pub component: String,
    pub anderson_darling: Option<TestResult>,
    pub bartlett: Option<TestResult>,
    /// Why a test could not be run.
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub acf: Vec<AcfResult>,
    pub fraction_inside: f64,
    pub components: Vec<ComponentTests>,
}

pub const DEFAULT_BINS: usize = 4;

fn component(name: &str, values: &[f64], bins: usize, seed: u64) -> ComponentTests {
    let mut notes = Vec::new();
    let anderson_darling = anderson_darling(values).map_err(|e| notes.push(format!("{e}"))).ok();
    let bartlett = bartlett(&random_bins(values, bins, seed))
        .map_err(|e| notes.push(format!("{e}")))
        .ok();
    ComponentTests {
        component: name.into(),
        anderson_darling,
        bartlett,
        notes,
    }
}

/// Correlograms of the grouped residuals plus normality and equal-variance
/// tests for the residuals and every predicted random effect. Random effects
/// and residuals are dealt into `bins` random bins for Bartlett's test.
pub fn diagnose(
    fm: &FittedLmm,
    ds: &LongDataset,
    pa: &PseudoUnitAssignment,
    max_lag: Option<usize>,
    bins: usize,
    seed: u64,
) -> Result<Diagnostics> {
    let acf = residual_acf(&fm.residuals, ds, pa, max_lag)?;
    let mut components = Vec::new();
    for re in &fm.random {
        let name = match re.term {
            RandomTerm::ExperimentalUnit => "b",
            RandomTerm::PseudoUnit => "eta",
        };
        components.push(component(name, &re.values, bins, seed));
    }
    components.push(component("epsilon", &fm.residuals, bins, seed));
    Ok(Diagnostics {
        fraction_inside: fraction_inside(&acf),
        acf,
        components,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alternating_series() {
        let s: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let r = acf(&s, 1).unwrap();
        assert!((r[0] + 0.999).abs() < 1e-12);
    }

    #[test]
    fn default_lag() {
        assert_eq!(default_max_lag(10), 9);
        assert_eq!(default_max_lag(100), 20);
        assert_eq!(default_max_lag(2), 1);
    }

    #[test]
    fn constant_sample_is_rejected() {
        assert!(matches!(anderson_darling(&[3.0; 20]), Err(Error::ZeroVariance(_))));
    }

    #[test]
    fn duplicated_groups() {
        let g = vec![1.0, 2.0, 4.0, 8.0];
        let r = bartlett(&[g.clone(), g]).unwrap();
        assert!(r.statistic.abs() < 1e-12);
        assert!((r.p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bins_are_even() {
        let v: Vec<f64> = (0..10).map(f64::from).collect();
        let b = random_bins(&v, 4, 7);
        let sizes: Vec<usize> = b.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![3, 3, 2, 2]);
    }
}
