//! Monte Carlo comparison of the models over a one-parameter scenario sweep.
//!
//! Every replicate simulates a complete panel, destroys it, groups the
//! sample and fits every model to the same data. Replicate `r` uses the same
//! seed in every scenario, so scenarios differ only in the swept parameter.
//!
//! Replicates are independent jobs ([`replicate_jobs`], [`run_replicate`]);
//! [`summarize`] sorts the records, so any execution order gives the same report.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::anova::{anova_deaton, anova_fixed, anova_proposed, AnovaTable, Hypothesis};
use crate::data::{LongDataset, Term, TREATMENT};
use crate::grouping::{assign_by_unit, assign_pseudo_units, GroupingStrategy, PseudoUnitAssignment};
use crate::lmm::Criterion;
use crate::manova::{build_manova_responses, manova_test, ManovaHypothesis};
use crate::models::{fit_model, fit_model_at, truth_components, ModelKind, MseSet};
use crate::rng::derive_seed;
use crate::simulate::{destructive_sample, simulate_complete, SimulationConfig};
use crate::special::{ks_uniform, median, quantile_sorted};
use crate::{Error, Result};

/// Default replicate count of a grid.
pub const DEFAULT_REPS: usize = 100;
/// Slack allowed at each step of the MSE ordering.
pub const ORDERING_SLACK: f64 = 1e-6;
/// Level used for rejection rates.
pub const ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParameter {
    /// Largest interaction gap, `deltaATmax`.
    DeltaAT,
    /// Treatment gap `|A_2 − A_1|`, `deltaA`.
    DeltaA,
    /// Gap between the first and last time effect; sets `timeSlope = v/(t − 1)`.
    DeltaT,
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::DeltaAT => "dAT",
            SweepParameter::DeltaA => "dA",
            SweepParameter::DeltaT => "dT",
        }
    }

    pub fn default_values(self) -> Vec<f64> {
        match self {
            SweepParameter::DeltaAT => vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
            SweepParameter::DeltaA => vec![0.0, 0.1, 0.4, 0.6, 0.8, 1.0],
            SweepParameter::DeltaT => vec![0.0, 0.5, 1.0, 2.0],
        }
    }

    /// The hypothesis whose effect the parameter controls.
    pub fn hypothesis(self) -> Hypothesis {
        match self {
            SweepParameter::DeltaAT => Hypothesis::Interaction,
            SweepParameter::DeltaA => Hypothesis::Treatment,
            SweepParameter::DeltaT => Hypothesis::Time,
        }
    }
}

impl fmt::Display for SweepParameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepParameter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dAT" | "deltaATmax" => Ok(SweepParameter::DeltaAT),
            "dA" | "deltaA" => Ok(SweepParameter::DeltaA),
            "dT" | "deltaTmax" => Ok(SweepParameter::DeltaT),
            _ => Err(Error::Invalid(format!("unknown sweep parameter `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

impl Sweep {
    pub fn new(parameter: SweepParameter) -> Self {
        Sweep {
            parameter,
            values: parameter.default_values(),
        }
    }

    /// Parses `dAT=0,0.5,1`; a bare name takes the default values.
    pub fn parse(s: &str) -> Result<Self> {
        let (name, values) = match s.split_once('=') {
            Some((n, v)) => (n.trim(), Some(v)),
            None => (s.trim(), None),
        };
        let parameter: SweepParameter = name.parse()?;
        let values = match values {
            None => parameter.default_values(),
            Some(v) => v
                .split(',')
                .map(|x| {
                    x.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Invalid(format!("bad sweep value `{x}`")))
                })
                .collect::<Result<Vec<f64>>>()?,
        };
        Ok(Sweep { parameter, values })
    }

    /// `base` with the swept parameter set to `value`.
    pub fn apply(&self, base: &SimulationConfig, value: f64) -> SimulationConfig {
        let mut cfg = base.clone();
        match self.parameter {
            SweepParameter::DeltaAT => cfg.delta_at_max = value,
            SweepParameter::DeltaA => cfg.delta_a = value,
            SweepParameter::DeltaT => cfg.time_slope = value / (cfg.t as f64 - 1.0),
        }
        cfg
    }

    pub fn label(&self, value: f64) -> String {
        format!("{}={}", self.parameter, value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioGrid {
    pub base: SimulationConfig,
    pub sweep: Sweep,
    pub reps: usize,
    pub criterion: Criterion,
}

impl ScenarioGrid {
    pub fn new(base: SimulationConfig, sweep: Sweep, reps: usize) -> Self {
        ScenarioGrid {
            base,
            sweep,
            reps,
            criterion: Criterion::Reml,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps < 1 {
            return Err(Error::Invalid("reps must be at least 1".into()));
        }
        if self.sweep.values.is_empty() {
            return Err(Error::Invalid("sweep has no values".into()));
        }
        if let Some(v) = self.sweep.values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Invalid(format!("sweep value {v} must be finite and non-negative")));
        }
        self.base.validate()
    }

    pub fn n_scenarios(&self) -> usize {
        self.sweep.values.len()
    }

    pub fn scenario_config(&self, scenario: usize) -> SimulationConfig {
        self.sweep.apply(&self.base, self.sweep.values[scenario])
    }

    pub fn scenario_label(&self, scenario: usize) -> String {
        self.sweep.label(self.sweep.values[scenario])
    }

    /// Seed of replicate `rep`, shared by all scenarios.
    pub fn replicate_seed(&self, rep: usize) -> u64 {
        derive_seed(self.base.seed, &[rep as u64])
    }
}

/// What every replicate computes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Protocol {
    /// Estimated-variance MSE of every model.
    pub mse: bool,
    /// MSE with the variance ratios held at the generator's values.
    pub truth: bool,
    pub hypotheses: Vec<Hypothesis>,
}

impl Protocol {
    pub fn mse() -> Self {
        Protocol {
            mse: true,
            truth: true,
            hypotheses: Vec::new(),
        }
    }

    pub fn pvalues(h: Hypothesis) -> Self {
        Protocol {
            mse: false,
            truth: false,
            hypotheses: vec![h],
        }
    }

    pub fn all() -> Self {
        Protocol {
            mse: true,
            truth: true,
            hypotheses: Hypothesis::ALL.to_vec(),
        }
    }
}

/// Sources of p-values: four methods on the destructive sample and the
/// reference computed on the complete panel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PMethod {
    Fixed,
    Deaton,
    Proposed,
    Manova,
    Reference,
}

impl PMethod {
    pub const ALL: [PMethod; 5] = [
        PMethod::Fixed,
        PMethod::Deaton,
        PMethod::Proposed,
        PMethod::Manova,
        PMethod::Reference,
    ];
    pub const COMPARED: [PMethod; 4] = [PMethod::Fixed, PMethod::Deaton, PMethod::Proposed, PMethod::Manova];

    pub fn name(self) -> &'static str {
        match self {
            PMethod::Fixed => "fixed",
            PMethod::Deaton => "deaton",
            PMethod::Proposed => "proposed",
            PMethod::Manova => "manova",
            PMethod::Reference => "reference",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PValue {
    pub hypothesis: Hypothesis,
    pub method: PMethod,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub method: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub scenario: usize,
    pub rep: usize,
    pub seed: u64,
    pub mse: BTreeMap<ModelKind, f64>,
    pub mse_truth: BTreeMap<ModelKind, f64>,
    pub p_values: Vec<PValue>,
    pub failures: Vec<Failure>,
}

impl ReplicateRecord {
    pub fn p(&self, h: Hypothesis, m: PMethod) -> Option<f64> {
        self.p_values.iter().find(|v| v.hypothesis == h && v.method == m).map(|v| v.p)
    }

    fn mse_set(map: &BTreeMap<ModelKind, f64>) -> Option<MseSet> {
        Some(MseSet {
            proposed: *map.get(&ModelKind::Proposed)?,
            randint: *map.get(&ModelKind::RandInt)?,
            deaton: *map.get(&ModelKind::Deaton)?,
            fixed: *map.get(&ModelKind::Fixed)?,
            manova: *map.get(&ModelKind::Manova)?,
        })
    }

    pub fn estimated(&self) -> Option<MseSet> {
        Self::mse_set(&self.mse)
    }

    pub fn at_truth(&self) -> Option<MseSet> {
        Self::mse_set(&self.mse_truth)
    }
}

/// `(scenario, rep)` for every replicate of the grid, in report order.
pub fn replicate_jobs(grid: &ScenarioGrid) -> Vec<(usize, usize)> {
    (0..grid.n_scenarios())
        .flat_map(|s| (0..grid.reps).map(move |r| (s, r)))
        .collect()
}

fn manova_hypothesis(h: Hypothesis) -> ManovaHypothesis {
    let a = Term::new(&[TREATMENT]);
    match h {
        Hypothesis::Interaction => ManovaHypothesis::TimeInteraction(a),
        Hypothesis::Treatment => ManovaHypothesis::Between(a),
        Hypothesis::Time => ManovaHypothesis::Time,
    }
}

struct Recorder {
    failures: Vec<Failure>,
}

impl Recorder {
    fn keep<T>(&mut self, method: &str, r: Result<T>) -> Option<T> {
        match r {
            Ok(v) => Some(v),
            Err(e) => {
                self.failures.push(Failure {
                    method: method.to_string(),
                    message: e.to_string(),
                });
                None
            }
        }
    }
}

/// Runs one replicate. Failures are recorded in the result, never raised.
pub fn run_replicate(grid: &ScenarioGrid, protocol: &Protocol, scenario: usize, rep: usize) -> ReplicateRecord {
    let seed = grid.replicate_seed(rep);
    let mut cfg = grid.scenario_config(scenario);
    cfg.seed = seed;
    let mut record = ReplicateRecord {
        scenario,
        rep,
        seed,
        mse: BTreeMap::new(),
        mse_truth: BTreeMap::new(),
        p_values: Vec::new(),
        failures: Vec::new(),
    };
    let mut rec = Recorder { failures: Vec::new() };
    let data = rec.keep("simulate", simulate_complete(&cfg)).and_then(|complete| {
        let sample = rec.keep("simulate", destructive_sample(&complete, cfg.k, seed))?;
        let pa = rec.keep(
            "group",
            assign_pseudo_units(&sample, cfg.g, GroupingStrategy::Rank, None),
        )?;
        Some((complete, sample, pa))
    });
    if let Some((complete, sample, pa)) = data {
        let canonical = Term::canonical();
        for kind in ModelKind::ALL {
            if protocol.mse {
                let fit = fit_model(kind, &sample, &canonical, Some(&pa), grid.criterion);
                if let Some(f) = rec.keep(kind.name(), fit) {
                    record.mse.insert(kind, f.mse);
                }
            }
            if protocol.truth {
                let fit = truth_components(kind, &cfg).and_then(|vc| match vc {
                    Some(vc) => fit_model_at(kind, &sample, &canonical, Some(&pa), grid.criterion, &vc),
                    None => fit_model(kind, &sample, &canonical, Some(&pa), grid.criterion),
                });
                if let Some(f) = rec.keep(&format!("{}@truth", kind.name()), fit) {
                    record.mse_truth.insert(kind, f.mse);
                }
            }
        }
        if !protocol.hypotheses.is_empty() {
            let tables: [(PMethod, Option<AnovaTable>); 4] = [
                (PMethod::Fixed, rec.keep("fixed", anova_fixed(&sample))),
                (PMethod::Deaton, rec.keep("deaton", anova_deaton(&sample))),
                (PMethod::Proposed, rec.keep("proposed", anova_proposed(&sample, &pa))),
                (PMethod::Reference, rec.keep("reference", reference_table(&complete))),
            ];
            let mr = rec.keep("manova", build_manova_responses(&sample, &pa));
            let a = vec![Term::new(&[TREATMENT])];
            for &h in &protocol.hypotheses {
                for (method, table) in &tables {
                    if let Some(p) = table.as_ref().and_then(|t| t.p_value(h)) {
                        record.p_values.push(PValue { hypothesis: h, method: *method, p });
                    }
                }
                if let Some(mr) = &mr {
                    if let Some(res) = rec.keep("manova", manova_test(mr, &a, &manova_hypothesis(h))) {
                        record.p_values.push(PValue {
                            hypothesis: h,
                            method: PMethod::Manova,
                            p: res.statistics.pillai.p,
                        });
                    }
                }
            }
            record.p_values.sort_by(|x, y| (x.hypothesis, x.method).cmp(&(y.hypothesis, y.method)));
        }
    }
    record.failures = rec.failures;
    record
}

/// ANOVA of the complete panel with each observational unit as its own group.
pub fn reference_table(complete: &LongDataset) -> Result<AnovaTable> {
    anova_proposed(complete, &assign_by_unit(complete)?)
}

/// Five-number summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl Quantiles {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(Quantiles {
            n: v.len(),
            min: v[0],
            q1: quantile_sorted(&v, 0.25),
            median: quantile_sorted(&v, 0.5),
            q3: quantile_sorted(&v, 0.75),
            max: v[v.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseSummary {
    pub method: ModelKind,
    pub estimated: Option<Quantiles>,
    pub at_truth: Option<Quantiles>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PSummary {
    pub hypothesis: Hypothesis,
    pub method: PMethod,
    pub quantiles: Option<Quantiles>,
    /// Share of replicates with `p < ALPHA`.
    pub reject_rate: Option<f64>,
    /// KS test of uniformity of the p-values.
    pub ks_p: Option<f64>,
    /// Median over replicates of `|p − p_reference|`.
    pub median_abs_diff: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderingCount {
    pub holds: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub scenario: usize,
    pub label: String,
    pub value: f64,
    pub mse: Vec<MseSummary>,
    pub ordering: OrderingCount,
    pub ordering_at_truth: OrderingCount,
    pub p: Vec<PSummary>,
}

impl ScenarioSummary {
    pub fn p_summary(&self, h: Hypothesis, m: PMethod) -> Option<&PSummary> {
        self.p.iter().find(|s| s.hypothesis == h && s.method == m)
    }

    pub fn mse_summary(&self, m: ModelKind) -> Option<&MseSummary> {
        self.mse.iter().find(|s| s.method == m)
    }
}

/// Whether the median p-value never rises along the sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monotonicity {
    pub hypothesis: Hypothesis,
    pub method: PMethod,
    pub medians: Vec<Option<f64>>,
    pub non_increasing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureEntry {
    pub scenario: usize,
    pub rep: usize,
    pub method: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub grid: ScenarioGrid,
    pub protocol: Protocol,
    pub scenarios: Vec<ScenarioSummary>,
    pub monotonicity: Vec<Monotonicity>,
    pub failures: Vec<FailureEntry>,
    pub records: Vec<ReplicateRecord>,
}

/// One line of the long-format export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TidyRow {
    pub scenario: String,
    pub rep: usize,
    pub method: String,
    pub metric: String,
    pub value: f64,
}

pub fn p_metric(h: Hypothesis) -> String {
    format!("p_H{}", h.index())
}

impl ComparisonReport {
    pub fn tidy_rows(&self) -> Vec<TidyRow> {
        let mut out = Vec::new();
        for r in &self.records {
            let scenario = self.grid.scenario_label(r.scenario);
            let mut push = |method: &str, metric: String, value: f64| {
                out.push(TidyRow {
                    scenario: scenario.clone(),
                    rep: r.rep,
                    method: method.to_string(),
                    metric,
                    value,
                })
            };
            for (k, v) in &r.mse {
                push(k.name(), "mse".into(), *v);
            }
            for (k, v) in &r.mse_truth {
                push(k.name(), "mse_truth".into(), *v);
            }
            for p in &r.p_values {
                push(p.method.name(), p_metric(p.hypothesis), p.p);
            }
        }
        out
    }

    /// Replicates (all scenarios) whose estimated MSEs keep the ordering.
    pub fn ordering_total(&self) -> OrderingCount {
        self.scenarios.iter().fold(OrderingCount { holds: 0, total: 0 }, |acc, s| OrderingCount {
            holds: acc.holds + s.ordering.holds,
            total: acc.total + s.ordering.total,
        })
    }

    pub fn ordering_total_at_truth(&self) -> OrderingCount {
        self.scenarios.iter().fold(OrderingCount { holds: 0, total: 0 }, |acc, s| OrderingCount {
            holds: acc.holds + s.ordering_at_truth.holds,
            total: acc.total + s.ordering_at_truth.total,
        })
    }
}

fn count_ordering(sets: impl Iterator<Item = Option<MseSet>>) -> OrderingCount {
    let mut c = OrderingCount { holds: 0, total: 0 };
    for s in sets.flatten() {
        c.total += 1;
        if s.ordering_holds(ORDERING_SLACK) {
            c.holds += 1;
        }
    }
    c
}

/// Sorts the records and builds every summary.
pub fn summarize(grid: &ScenarioGrid, protocol: &Protocol, mut records: Vec<ReplicateRecord>) -> ComparisonReport {
    records.sort_by_key(|r| (r.scenario, r.rep));
    let mut scenarios = Vec::with_capacity(grid.n_scenarios());
    for s in 0..grid.n_scenarios() {
        let recs: Vec<&ReplicateRecord> = records.iter().filter(|r| r.scenario == s).collect();
        let mse = ModelKind::ALL
            .iter()
            .map(|&k| {
                let est: Vec<f64> = recs.iter().filter_map(|r| r.mse.get(&k).copied()).collect();
                let tru: Vec<f64> = recs.iter().filter_map(|r| r.mse_truth.get(&k).copied()).collect();
                MseSummary {
                    method: k,
                    estimated: Quantiles::of(&est),
                    at_truth: Quantiles::of(&tru),
                }
            })
            .filter(|m| m.estimated.is_some() || m.at_truth.is_some())
            .collect();
        let mut p = Vec::new();
        for &h in &protocol.hypotheses {
            for m in PMethod::ALL {
                let vals: Vec<f64> = recs.iter().filter_map(|r| r.p(h, m)).collect();
                let diffs: Vec<f64> = recs
                    .iter()
                    .filter_map(|r| Some((r.p(h, m)? - r.p(h, PMethod::Reference)?).abs()))
                    .collect();
                p.push(PSummary {
                    hypothesis: h,
                    method: m,
                    quantiles: Quantiles::of(&vals),
                    reject_rate: (!vals.is_empty())
                        .then(|| vals.iter().filter(|&&v| v < ALPHA).count() as f64 / vals.len() as f64),
                    ks_p: (vals.len() >= 2).then(|| ks_uniform(&vals).1),
                    median_abs_diff: (m != PMethod::Reference && !diffs.is_empty()).then(|| median(&diffs)),
                });
            }
        }
        scenarios.push(ScenarioSummary {
            scenario: s,
            label: grid.scenario_label(s),
            value: grid.sweep.values[s],
            mse,
            ordering: count_ordering(recs.iter().map(|r| r.estimated())),
            ordering_at_truth: count_ordering(recs.iter().map(|r| r.at_truth())),
            p,
        });
    }
    let mut monotonicity = Vec::new();
    for &h in &protocol.hypotheses {
        for m in PMethod::ALL {
            let medians: Vec<Option<f64>> = scenarios
                .iter()
                .map(|s| s.p_summary(h, m).and_then(|x| x.quantiles).map(|q| q.median))
                .collect();
            let present: Vec<f64> = medians.iter().flatten().copied().collect();
            monotonicity.push(Monotonicity {
                hypothesis: h,
                method: m,
                non_increasing: present.windows(2).all(|w| w[1] <= w[0]),
                medians,
            });
        }
    }
    let failures = records
        .iter()
        .flat_map(|r| {
            r.failures.iter().map(move |f| FailureEntry {
                scenario: r.scenario,
                rep: r.rep,
                method: f.method.clone(),
                message: f.message.clone(),
            })
        })
        .collect();
    ComparisonReport {
        grid: grid.clone(),
        protocol: protocol.clone(),
        scenarios,
        monotonicity,
        failures,
        records,
    }
}

/// Runs every replicate in order on the current thread.
pub fn run_experiment(grid: &ScenarioGrid, protocol: &Protocol) -> Result<ComparisonReport> {
    grid.validate()?;
    let records = replicate_jobs(grid)
        .into_iter()
        .map(|(s, r)| run_replicate(grid, protocol, s, r))
        .collect();
    Ok(summarize(grid, protocol, records))
}

/// MSE of every model, estimated and at the true variance ratios.
pub fn run_mse_comparison(grid: &ScenarioGrid) -> Result<ComparisonReport> {
    run_experiment(grid, &Protocol::mse())
}

/// p-values of one hypothesis from every method and the reference.
pub fn run_pvalue_experiment(grid: &ScenarioGrid, hypothesis: Hypothesis) -> Result<ComparisonReport> {
    run_experiment(grid, &Protocol::pvalues(hypothesis))
}

/// Grouping used for a destructive sample inside the protocol.
pub fn protocol_grouping(sample: &LongDataset, g: usize) -> Result<PseudoUnitAssignment> {
    assign_pseudo_units(sample, g, GroupingStrategy::Rank, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_parsing() {
        let s = Sweep::parse("dAT=0,0.5,1").unwrap();
        assert_eq!(s.parameter, SweepParameter::DeltaAT);
        assert_eq!(s.values, vec![0.0, 0.5, 1.0]);
        assert_eq!(Sweep::parse("dA").unwrap().values, SweepParameter::DeltaA.default_values());
        assert!(Sweep::parse("dX=1").is_err());
        assert!(Sweep::parse("dA=1,x").is_err());
    }

    #[test]
    fn time_sweep_sets_the_slope() {
        let base = SimulationConfig::default();
        let cfg = Sweep::new(SweepParameter::DeltaT).apply(&base, 2.0);
        assert!((cfg.time_slope - 2.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn jobs_cover_the_grid() {
        let grid = ScenarioGrid::new(SimulationConfig::default(), Sweep::parse("dA=0,1").unwrap(), 3);
        assert_eq!(replicate_jobs(&grid).len(), 6);
        assert_eq!(grid.replicate_seed(2), grid.replicate_seed(2));
        assert_ne!(grid.replicate_seed(1), grid.replicate_seed(2));
    }
}
