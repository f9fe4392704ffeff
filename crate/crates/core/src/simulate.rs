//! Complete-panel generator with AR(1) errors and the destructive sampler.
//!
//! The generator draws
//! `y = mu + A_m + b_i + eta_j(i) + T_k + AT_mk + eps`, where every
//! observational unit `j` of experimental unit `i` carries its own random
//! intercept and, for each replicate, an error trajectory over the `t` times
//! with correlation `rho^|k - k'|`. The destructive sampler then keeps each
//! unit at a single time only.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)] // unused when std is in the build graph
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{natural_cmp, Factor, LongDataset, Observation, TREATMENT};
use crate::rng::stream;
use crate::{Error, Result};

const SIMULATE_STREAM: u64 = 0x5349_4d55;
const DESTROY_STREAM: u64 = 0x4445_5354;

/// Generator settings. Field names match the JSON config document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    /// Experimental units per treatment.
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub t: usize,
    /// Observational units sampled per (eu, time).
    #[serde(rename = "K")]
    pub k: usize,
    /// Simulated observational units per eu; `K * t` when absent.
    #[serde(rename = "J")]
    pub j: Option<usize>,
    /// Replicate measurements of a unit at its time.
    #[serde(rename = "L")]
    pub l: usize,
    pub mu: f64,
    #[serde(rename = "deltaA")]
    pub delta_a: f64,
    #[serde(rename = "timeSlope")]
    pub time_slope: f64,
    #[serde(rename = "deltaATmax")]
    pub delta_at_max: f64,
    pub sigma_b2: f64,
    pub sigma_eta2: f64,
    pub sigma_eps2: f64,
    pub rho: f64,
    pub seed: u64,
    #[serde(rename = "G")]
    pub g: usize,
}

impl Default for SimulationConfig {
    /// The desk-scale version of the reference study: t = 10, K = 4, L = 10,
    /// variances (5, 4, 2), rho = 0.8, a slope of 5 per time unit.
    fn default() -> Self {
        SimulationConfig {
            n: 10,
            m: 2,
            t: 10,
            k: 4,
            j: None,
            l: 10,
            mu: 50.0,
            delta_a: 0.0,
            time_slope: 5.0,
            delta_at_max: 0.0,
            sigma_b2: 5.0,
            sigma_eta2: 4.0,
            sigma_eps2: 2.0,
            rho: 0.8,
            seed: 1,
            g: 2,
        }
    }
}

impl SimulationConfig {
    pub fn units_per_eu(&self) -> usize {
        self.j.unwrap_or(self.k * self.t)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Infeasible(msg));
        for (name, v) in [
            ("sigma_b2", self.sigma_b2),
            ("sigma_eta2", self.sigma_eta2),
            ("sigma_eps2", self.sigma_eps2),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a finite non-negative variance"));
            }
        }
        if !(self.rho.abs() < 1.0) {
            return bad(format!("|rho| must be < 1, got {}", self.rho));
        }
        if self.m < 2 || self.t < 2 {
            return bad(format!("need M >= 2 and t >= 2, got M = {}, t = {}", self.m, self.t));
        }
        if self.n < 1 || self.k < 1 || self.l < 1 || self.g < 1 {
            return bad("n, K, L and G must be positive".into());
        }
        if self.units_per_eu() < self.k * self.t {
            return bad(format!(
                "J = {} units cannot cover K * t = {} destructive draws",
                self.units_per_eu(),
                self.k * self.t
            ));
        }
        for v in [self.mu, self.delta_a, self.time_slope, self.delta_at_max] {
            if !v.is_finite() {
                return bad("effect sizes must be finite".into());
            }
        }
        Ok(())
    }

    /// Row count after destructive sampling: `n * M * t * K * L`.
    pub fn destructive_rows(&self) -> usize {
        self.n * self.m * self.t * self.k * self.l
    }
}

/// Fixed effects implied by a config, each satisfying the sum-to-zero constraints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedEffects {
    pub mu: f64,
    pub a: Vec<f64>,
    pub t: Vec<f64>,
    /// `at[m][k]`.
    pub at: Vec<Vec<f64>>,
}

impl FixedEffects {
    pub fn mean(&self, m: usize, k: usize) -> f64 {
        self.mu + self.a[m] + self.t[k] + self.at[m][k]
    }
}

/// Centered position of `i` among `n` equally spaced points, in `[-1/2, 1/2]`.
fn centered(i: usize, n: usize) -> f64 {
    (i as f64 - (n as f64 - 1.0) / 2.0) / (n as f64 - 1.0)
}

/// Treatment effects spread linearly with `A_M - A_1 = deltaA`; time effects
/// follow `slope * (k - (t + 1) / 2)`; the interaction is the product of a
/// centered treatment weight and a centered time ramp, scaled so that the
/// largest gap between treatments at any time equals `deltaATmax`.
pub fn fixed_effects(cfg: &SimulationConfig) -> FixedEffects {
    let (m, t) = (cfg.m, cfg.t);
    let a = (0..m).map(|i| cfg.delta_a * centered(i, m)).collect();
    let tk = (0..t)
        .map(|k| cfg.time_slope * (k as f64 - (t as f64 - 1.0) / 2.0))
        .collect();
    let at = (0..m)
        .map(|i| {
            (0..t)
                .map(|k| cfg.delta_at_max * centered(i, m) * 2.0 * centered(k, t))
                .collect()
        })
        .collect();
    FixedEffects { mu: cfg.mu, a, t: tk, at }
}

/// First-order autoregressive correlation matrix `rho^|a - b|`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ar1Matrix {
    pub t: usize,
    pub rho: f64,
    pub matrix: DMatrix<f64>,
}

pub fn ar1_matrix(t: usize, rho: f64) -> Result<Ar1Matrix> {
    if !(rho.abs() < 1.0) {
        return Err(Error::Invalid(format!("|rho| must be < 1, got {rho}")));
    }
    if t == 0 {
        return Err(Error::Invalid("dimension must be positive".into()));
    }
    let matrix = DMatrix::from_fn(t, t, |a, b| rho.powi(a.abs_diff(b) as i32));
    Ok(Ar1Matrix { t, rho, matrix })
}

impl Ar1Matrix {
    /// Lower Cholesky factor of `scale * Sigma`.
    pub fn scaled_cholesky(&self, scale: f64) -> Result<DMatrix<f64>> {
        let chol = self
            .matrix
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Singular("AR(1) matrix is not positive definite".into()))?;
        Ok(chol.l() * scale.sqrt())
    }
}

fn treatment_factor(m: usize) -> Factor {
    Factor::new(TREATMENT, (1..=m).map(|i| format!("{i}")).collect())
}

/// Draws the complete panel: every unit observed at every time.
///
/// Rows are ordered by experimental unit, time, unit and replicate.
/// Experimental units are numbered `1..=n*M`, the first `n` in treatment 1.
pub fn simulate_complete(cfg: &SimulationConfig) -> Result<LongDataset> {
    cfg.validate()?;
    let fx = fixed_effects(cfg);
    let ar1 = ar1_matrix(cfg.t, cfg.rho)?;
    let chol = ar1.scaled_cholesky(cfg.sigma_eps2)?;
    let (t, j_units, l_reps) = (cfg.t, cfg.units_per_eu(), cfg.l);
    let (sd_b, sd_eta) = (cfg.sigma_b2.sqrt(), cfg.sigma_eta2.sqrt());
    let mut rows = Vec::with_capacity(cfg.n * cfg.m * j_units * l_reps * t);
    for e in 0..cfg.n * cfg.m {
        let treat = e / cfg.n;
        let mut rng = stream(cfg.seed, &[SIMULATE_STREAM, e as u64]);
        let b: f64 = sd_b * rng.sample::<f64, _>(StandardNormal);
        // noise[j][l][k]
        let mut noise = vec![vec![vec![0.0; t]; l_reps]; j_units];
        for unit in noise.iter_mut() {
            let eta: f64 = sd_eta * rng.sample::<f64, _>(StandardNormal);
            for rep in unit.iter_mut() {
                let z = DVector::from_fn(t, |_, _| rng.sample::<f64, _>(StandardNormal));
                let eps = &chol * z;
                for k in 0..t {
                    rep[k] = b + eta + eps[k];
                }
            }
        }
        for k in 0..t {
            for (j, unit) in noise.iter().enumerate() {
                for (l, rep) in unit.iter().enumerate() {
                    rows.push(Observation {
                        eu: format!("{}", e + 1),
                        obs: Some(format!("{}", j + 1)),
                        time: (k + 1) as u32,
                        rep: (l + 1) as u32,
                        levels: vec![treat],
                        y: fx.mean(treat, k) + rep[k],
                    });
                }
            }
        }
    }
    LongDataset::new(vec![treatment_factor(cfg.m)], rows)
}

/// Keeps `k` distinct units per (eu, time) so that every unit appears at one
/// time only. Units are allocated to times by a seeded shuffle within each
/// experimental unit; all replicates of a kept unit at its time are kept.
pub fn destructive_sample(ds: &LongDataset, k: usize, seed: u64) -> Result<LongDataset> {
    if k == 0 {
        return Err(Error::Invalid("K must be positive".into()));
    }
    let t = ds.times() as usize;
    let mut units: Vec<BTreeSet<&str>> = vec![BTreeSet::new(); ds.n_eu()];
    for (row, o) in ds.observations().iter().enumerate() {
        units[ds.eu_index()[row]].insert(o.obs_id());
    }
    let mut allocation: Vec<Vec<(&str, u32)>> = Vec::with_capacity(ds.n_eu());
    for (e, set) in units.iter().enumerate() {
        if set.len() < k * t {
            return Err(Error::Infeasible(format!(
                "insufficient unused units in eu {}: {} available, {} needed",
                ds.eu_ids()[e],
                set.len(),
                k * t
            )));
        }
        let mut ids: Vec<&str> = set.iter().copied().collect();
        ids.sort_by(|a, b| natural_cmp(a, b));
        let mut rng = stream(seed, &[DESTROY_STREAM, e as u64]);
        ids.shuffle(&mut rng);
        let mut alloc: Vec<(&str, u32)> = ids
            .into_iter()
            .take(k * t)
            .enumerate()
            .map(|(i, id)| (id, (i / k + 1) as u32))
            .collect();
        alloc.sort();
        allocation.push(alloc);
    }
    let rows: Vec<Observation> = ds
        .observations()
        .iter()
        .enumerate()
        .filter(|(row, o)| {
            let alloc = &allocation[ds.eu_index()[*row]];
            alloc
                .binary_search_by(|(id, _)| id.cmp(&o.obs_id()))
                .map(|i| alloc[i].1 == o.time)
                .unwrap_or(false)
        })
        .map(|(_, o)| o.clone())
        .collect();
    for (e, per_time) in ds.cells().iter().enumerate() {
        for (ti, idx) in per_time.iter().enumerate() {
            let available = idx.iter().map(|&r| ds.observations()[r].obs_id()).collect::<BTreeSet<_>>();
            let wanted = allocation[e].iter().filter(|(_, time)| *time as usize == ti + 1);
            if wanted.clone().any(|(id, _)| !available.contains(id)) {
                return Err(Error::Infeasible(format!(
                    "unit allocated to eu {} time {} was never observed there",
                    ds.eu_ids()[e],
                    ti + 1
                )));
            }
        }
    }
    LongDataset::new(ds.factors().to_vec(), rows)
}

/// Complete panel plus its destructive sample, both from `cfg.seed`.
pub fn simulate_destructive(cfg: &SimulationConfig) -> Result<(LongDataset, LongDataset)> {
    let complete = simulate_complete(cfg)?;
    let sample = destructive_sample(&complete, cfg.k, cfg.seed)?;
    Ok((complete, sample))
}
