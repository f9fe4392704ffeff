//! Serializable views of fits, tables and experiment reports.

use std::path::Path;

use dlmm_core::data::{EffectTable, TIME};
use dlmm_core::diagnostics::{AcfResult, Diagnostics, TestResult};
use dlmm_core::experiments::{p_metric, ComparisonReport, PMethod, Quantiles};
use dlmm_core::lmm::RandomEffects;
use dlmm_core::models::{ModelFit, ModelKind};
use dlmm_core::{Criterion, DesignMatrices, Hypothesis, LongDataset, ManovaResult, RandomTerm, Term};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::io::{records_csv, to_json, write_atomic};
use crate::svg::{boxplot_svg, correlogram_svg, BoxPanel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectCell {
    /// Level label of each factor of the term.
    pub levels: Vec<String>,
    pub value: f64,
}

/// Full effects of one fixed term; the values of each factor sum to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectReport {
    pub term: String,
    pub factors: Vec<String>,
    pub cells: Vec<EffectCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_b2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_eta2: Option<f64>,
    pub sigma_eps2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomEffectReport {
    pub term: String,
    pub labels: Vec<String>,
    pub values: Vec<f64>,
}

/// Everything `fit` writes. Fields that only exist for mixed models are
/// absent for `manova`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub model: ModelKind,
    pub criterion: Criterion,
    pub formula: String,
    pub n_obs: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub groups: Option<usize>,
    pub effects: Vec<EffectReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variance_components: Option<VarianceReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub deviance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    pub boundary: Vec<String>,
    pub warnings: Vec<String>,
    pub mse: f64,
    pub correlation: f64,
    pub pseudo_r2: f64,
    pub random_effects: Vec<RandomEffectReport>,
}

pub fn random_term_name(t: RandomTerm) -> &'static str {
    match t {
        RandomTerm::ExperimentalUnit => "b",
        RandomTerm::PseudoUnit => "eta",
    }
}

fn level_labels(ds: &LongDataset, factor: &str) -> Vec<String> {
    if factor == TIME {
        return (1..=ds.times()).map(|t| t.to_string()).collect();
    }
    ds.factor_index(factor)
        .map(|i| ds.factors()[i].levels.clone())
        .unwrap_or_default()
}

fn effect_report(ds: &LongDataset, table: &EffectTable) -> EffectReport {
    let labels: Vec<Vec<String>> = table.term.0.iter().map(|f| level_labels(ds, f)).collect();
    let cells = table
        .values
        .iter()
        .enumerate()
        .map(|(cell, &value)| {
            // Row-major over `dims`, last factor fastest.
            let mut rest = cell;
            let mut levels = vec![String::new(); table.dims.len()];
            for k in (0..table.dims.len()).rev() {
                let l = rest % table.dims[k];
                rest /= table.dims[k];
                levels[k] = labels[k].get(l).cloned().unwrap_or_else(|| (l + 1).to_string());
            }
            EffectCell { levels, value }
        })
        .collect();
    EffectReport {
        term: table.term.to_string(),
        factors: table.term.0.clone(),
        cells,
    }
}

fn random_report(r: &RandomEffects) -> RandomEffectReport {
    RandomEffectReport {
        term: random_term_name(r.term).into(),
        labels: r.labels.clone(),
        values: r.values.clone(),
    }
}

pub fn fit_report(
    ds: &LongDataset,
    fit: &ModelFit,
    design: Option<&DesignMatrices>,
    formula: &[Term],
    criterion: Criterion,
    groups: Option<usize>,
) -> Result<FitReport> {
    let formula_text = if formula.is_empty() {
        "1".to_string()
    } else {
        formula.iter().map(Term::to_string).collect::<Vec<_>>().join("+")
    };
    let mut report = FitReport {
        model: fit.kind,
        criterion,
        formula: formula_text,
        n_obs: ds.len(),
        groups,
        effects: Vec::new(),
        variance_components: None,
        deviance: None,
        converged: None,
        iterations: None,
        boundary: Vec::new(),
        warnings: Vec::new(),
        mse: fit.mse,
        correlation: fit.correlation,
        pseudo_r2: fit.pseudo_r2,
        random_effects: Vec::new(),
    };
    if let (Some(fm), Some(dm)) = (&fit.lmm, design) {
        report.effects = dm.decode(&fm.beta)?.iter().map(|t| effect_report(ds, t)).collect();
        let has = |t| fm.vc.terms.contains(&t);
        report.variance_components = Some(VarianceReport {
            sigma_b2: has(RandomTerm::ExperimentalUnit).then_some(fm.vc.sigma_b2),
            sigma_eta2: has(RandomTerm::PseudoUnit).then_some(fm.vc.sigma_eta2),
            sigma_eps2: fm.vc.sigma_eps2,
        });
        report.deviance = Some(fm.deviance);
        report.converged = Some(fm.converged);
        report.iterations = Some(fm.iterations);
        report.boundary = fm.boundary.iter().map(|&t| random_term_name(t).to_string()).collect();
        report.warnings = fm.warnings.clone();
        report.random_effects = fm.random.iter().map(random_report).collect();
    }
    Ok(report)
}

/// Rows in the column layout `term,df,pillai,approxF,numdf,dendf,p`.
pub fn manova_csv(results: &[ManovaResult]) -> String {
    let mut out = format!("{}\n", dlmm_core::manova::MANOVA_CSV_HEADER);
    for r in results {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    out
}

/// Aligned text with all four statistics per hypothesis.
pub fn manova_text(results: &[ManovaResult]) -> String {
    let mut out = format!(
        "{:<8} {:>4} {:>10} {:>10} {:>7} {:>9} {:>11}\n",
        "Term", "Df", "Pillai", "approx F", "num Df", "den Df", "Pr(>F)"
    );
    for r in results {
        let s = &r.statistics.pillai;
        out.push_str(&format!(
            "{:<8} {:>4} {:>10.5} {:>10.4} {:>7} {:>9} {:>11.4e}\n",
            r.label(),
            r.df,
            s.statistic,
            s.approx_f,
            s.num_df,
            s.den_df,
            s.p
        ));
    }
    out.push_str("\nAll statistics\n");
    for r in results {
        let st = &r.statistics;
        for (name, t) in [
            ("Pillai", &st.pillai),
            ("Wilks", &st.wilks),
            ("Hotelling-Lawley", &st.hotelling_lawley),
            ("Roy", &st.roy),
        ] {
            out.push_str(&format!(
                "{:<8} {:<17} {:>10.5} {:>10.4} {:>7} {:>9} {:>11.4e}\n",
                r.label(),
                name,
                t.statistic,
                t.approx_f,
                t.num_df,
                t.den_df,
                t.p
            ));
        }
    }
    out
}

#[derive(Serialize)]
struct AcfRow<'a> {
    eu: &'a str,
    group: usize,
    lag: usize,
    acf: f64,
    band: f64,
    inside: bool,
}

pub fn acf_csv(results: &[AcfResult]) -> String {
    let rows: Vec<AcfRow> = results
        .iter()
        .flat_map(|r| {
            r.acf.iter().enumerate().map(move |(h, &v)| AcfRow {
                eu: &r.eu,
                group: r.group,
                lag: h + 1,
                acf: v,
                band: r.band,
                inside: v.abs() <= r.band,
            })
        })
        .collect();
    records_csv(&rows)
}

#[derive(Serialize)]
struct TestRow<'a> {
    component: &'a str,
    test: &'a str,
    statistic: Option<f64>,
    p: Option<f64>,
    n: Option<usize>,
    note: &'a str,
}

pub fn tests_csv(d: &Diagnostics) -> String {
    let mut rows = Vec::new();
    for c in &d.components {
        let mut notes = c.notes.iter();
        for (name, t) in [("Anderson-Darling", &c.anderson_darling), ("Bartlett", &c.bartlett)] {
            let t: Option<&TestResult> = t.as_ref();
            rows.push(TestRow {
                component: &c.component,
                test: name,
                statistic: t.map(|t| t.statistic),
                p: t.map(|t| t.p),
                n: t.map(|t| t.n),
                note: if t.is_none() { notes.next().map_or("", String::as_str) } else { "" },
            });
        }
    }
    records_csv(&rows)
}

/// Writes `acf.csv`, `tests.csv`, `diagnostics.json` and `correlogram.svg`.
pub fn write_diagnostics(dir: &Path, d: &Diagnostics) -> Result<()> {
    write_atomic(&dir.join("acf.csv"), acf_csv(&d.acf).as_bytes())?;
    write_atomic(&dir.join("tests.csv"), tests_csv(d).as_bytes())?;
    write_atomic(&dir.join("diagnostics.json"), to_json(d).as_bytes())?;
    let title = format!(
        "Grouped residual correlograms ({:.1}% inside the bands)",
        100.0 * d.fraction_inside
    );
    write_atomic(&dir.join("correlogram.svg"), correlogram_svg(&title, &d.acf, 4).as_bytes())
}

#[derive(Serialize)]
struct QuantileRow<'a> {
    scenario: &'a str,
    method: &'a str,
    metric: String,
    n: usize,
    min: f64,
    q1: f64,
    median: f64,
    q3: f64,
    max: f64,
}

impl<'a> QuantileRow<'a> {
    fn new(scenario: &'a str, method: &'a str, metric: String, q: &Quantiles) -> Self {
        QuantileRow {
            scenario,
            method,
            metric,
            n: q.n,
            min: q.min,
            q1: q.q1,
            median: q.median,
            q3: q.q3,
            max: q.max,
        }
    }
}

/// Five-number summaries behind every boxplot of the report.
pub fn quantiles_csv(report: &ComparisonReport) -> String {
    let mut rows = Vec::new();
    for s in &report.scenarios {
        for m in &s.mse {
            if let Some(q) = &m.estimated {
                rows.push(QuantileRow::new(&s.label, m.method.name(), "mse".into(), q));
            }
            if let Some(q) = &m.at_truth {
                rows.push(QuantileRow::new(&s.label, m.method.name(), "mse_truth".into(), q));
            }
        }
        for p in &s.p {
            if let Some(q) = &p.quantiles {
                rows.push(QuantileRow::new(&s.label, p.method.name(), p_metric(p.hypothesis), q));
            }
        }
    }
    records_csv(&rows)
}

#[derive(Serialize)]
struct PSummaryRow<'a> {
    scenario: &'a str,
    hypothesis: String,
    method: &'a str,
    reject_rate: Option<f64>,
    ks_p: Option<f64>,
    median_abs_diff: Option<f64>,
}

/// Rejection rate, uniformity p and distance to the reference per method.
pub fn pvalue_summary_csv(report: &ComparisonReport) -> String {
    let rows: Vec<PSummaryRow> = report
        .scenarios
        .iter()
        .flat_map(|s| {
            s.p.iter().map(move |p| PSummaryRow {
                scenario: &s.label,
                hypothesis: p_metric(p.hypothesis),
                method: p.method.name(),
                reject_rate: p.reject_rate,
                ks_p: p.ks_p,
                median_abs_diff: p.median_abs_diff,
            })
        })
        .collect();
    records_csv(&rows)
}

fn mse_panels(report: &ComparisonReport, kinds: &[ModelKind], truth: bool) -> Vec<BoxPanel> {
    report
        .scenarios
        .iter()
        .map(|s| BoxPanel {
            title: s.label.clone(),
            boxes: kinds
                .iter()
                .filter_map(|&k| {
                    let m = s.mse_summary(k)?;
                    let q = if truth { m.at_truth } else { m.estimated }?;
                    Some((k.name().to_string(), q))
                })
                .collect(),
        })
        .filter(|p| !p.boxes.is_empty())
        .collect()
}

fn p_panels(report: &ComparisonReport, h: Hypothesis) -> Vec<BoxPanel> {
    report
        .scenarios
        .iter()
        .map(|s| BoxPanel {
            title: s.label.clone(),
            boxes: PMethod::ALL
                .iter()
                .filter_map(|&m| Some((m.name().to_string(), s.p_summary(h, m)?.quantiles?)))
                .collect(),
        })
        .filter(|p| !p.boxes.is_empty())
        .collect()
}

/// Writes the JSON report, the tidy and quantile CSVs and the boxplot SVGs
/// into `dir`. Returns the file names written.
pub fn write_comparison(dir: &Path, report: &ComparisonReport) -> Result<Vec<String>> {
    let mut files: Vec<(String, String)> = vec![
        ("report.json".into(), to_json(report)),
        ("tidy.csv".into(), records_csv(&report.tidy_rows())),
        ("quantiles.csv".into(), quantiles_csv(report)),
    ];
    if !report.protocol.hypotheses.is_empty() {
        files.push(("pvalues.csv".into(), pvalue_summary_csv(report)));
    }
    let panels = [
        ("mse.svg", "MSE of each model", mse_panels(report, &ModelKind::ALL, false)),
        (
            "mse_deaton_proposed.svg",
            "MSE of the Deaton and proposed models",
            mse_panels(report, &[ModelKind::Deaton, ModelKind::Proposed], false),
        ),
        (
            "mse_truth.svg",
            "MSE with variance components at their true values",
            mse_panels(report, &ModelKind::ALL, true),
        ),
    ];
    for (name, title, p) in panels {
        if !p.is_empty() {
            files.push((name.into(), boxplot_svg(title, &p, 3)));
        }
    }
    for &h in &report.protocol.hypotheses {
        let p = p_panels(report, h);
        if !p.is_empty() {
            let title = format!("p-values for {} ({})", p_metric(h), h.source());
            files.push((format!("{}.svg", p_metric(h)), boxplot_svg(&title, &p, 3)));
        }
    }
    for (name, contents) in &files {
        write_atomic(&dir.join(name), contents.as_bytes())?;
    }
    Ok(files.into_iter().map(|(n, _)| n).collect())
}
