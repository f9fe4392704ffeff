//! Closed-form and published reference values.

mod common;

use common::*;
use dlmm_core::anova::{anova_deaton, anova_fixed, anova_proposed};
use dlmm_core::data::{build_design, TIME};
use dlmm_core::diagnostics::{acf, bartlett};
use dlmm_core::grouping::assign_pseudo_units;
use dlmm_core::lmm::{fit, Criterion};
use dlmm_core::manova::{build_manova_responses, manova_all, manova_test, ManovaStatistics};
use dlmm_core::models::{fit_model, ModelKind};
use dlmm_core::simulate::simulate_destructive;
use dlmm_core::special::{chi2_sf, f_sf, normal_cdf};
use dlmm_core::{GroupingStrategy, LongDataset, ManovaHypothesis, RandomTerm, Term};
use nalgebra::{DMatrix, DVector};

#[test]
fn toy_reml_matches_moment_estimates() {
    let ds = toy_one_way();
    let dm = build_design(&ds, &[], &[RandomTerm::ExperimentalUnit], None).unwrap();
    let fm = fit(&dm, &ds.responses(), Criterion::Reml).unwrap();
    assert!((fm.vc.sigma_eps2 - 2.0).abs() < 1e-6, "{}", fm.vc.sigma_eps2);
    assert!((fm.vc.sigma_b2 - 49.0).abs() < 1e-6, "{}", fm.vc.sigma_b2);
    let b = &fm.random[0].values;
    assert!((b[0] + 4.9).abs() < 1e-6 && (b[1] - 4.9).abs() < 1e-6, "{b:?}");
}

/// Between and within mean squares of a balanced one-way layout.
fn mean_squares(y: &[Vec<f64>]) -> (f64, f64, usize, usize) {
    let a = y.len();
    let n = y[0].len();
    let means: Vec<f64> = y.iter().map(|g| g.iter().sum::<f64>() / n as f64).collect();
    let grand = means.iter().sum::<f64>() / a as f64;
    let ssb: f64 = means.iter().map(|m| n as f64 * (m - grand).powi(2)).sum();
    let ssw: f64 = y
        .iter()
        .zip(&means)
        .map(|(g, m)| g.iter().map(|v| (v - m).powi(2)).sum::<f64>())
        .sum();
    (ssb / (a - 1) as f64, ssw / (a * (n - 1)) as f64, a, n)
}

#[test]
fn balanced_one_way_reml_and_ml() {
    let y = vec![
        vec![4.1, 5.3, 6.0, 4.8],
        vec![9.2, 10.1, 8.7, 11.0],
        vec![1.5, 3.2, 2.2, 2.9],
        vec![6.6, 7.1, 5.0, 6.3],
        vec![12.0, 10.8, 11.5, 13.1],
    ];
    let (msb, msw, a, n) = mean_squares(&y);
    let ds = one_way(&y);
    let dm = build_design(&ds, &[], &[RandomTerm::ExperimentalUnit], None).unwrap();

    let reml = fit(&dm, &ds.responses(), Criterion::Reml).unwrap();
    assert!(close(reml.vc.sigma_eps2, msw, 1e-6), "{} vs {msw}", reml.vc.sigma_eps2);
    assert!(close(reml.vc.sigma_b2, (msb - msw) / n as f64, 1e-6));

    let ml = fit(&dm, &ds.responses(), Criterion::Ml).unwrap();
    let sb_ml = ((1.0 - 1.0 / a as f64) * msb - msw) / n as f64;
    assert!(close(ml.vc.sigma_eps2, msw, 1e-6), "{} vs {msw}", ml.vc.sigma_eps2);
    assert!(close(ml.vc.sigma_b2, sb_ml, 1e-6), "{} vs {sb_ml}", ml.vc.sigma_b2);
}

#[test]
fn one_way_ols_effects() {
    let mut rows = Vec::new();
    for (level, mean) in [1.0, 2.0, 3.0].iter().enumerate() {
        for (j, d) in [-0.5, 0.0, 0.5].iter().enumerate() {
            rows.push(obs(&format!("{level}-{j}"), "1", 1, vec![level], mean + d));
        }
    }
    let ds = LongDataset::new(vec![treatment(3)], rows).unwrap();
    let terms = vec![Term::new(&["A"])];
    let dm = build_design(&ds, &terms, &[], None).unwrap();
    let fm = fit(&dm, &ds.responses(), Criterion::Reml).unwrap();
    let eff = dm.decode(&fm.beta).unwrap();
    assert!((eff[0].values[0] - 2.0).abs() < 1e-12);
    let a = &eff[1].values;
    for (got, want) in a.iter().zip([-1.0, 0.0, 1.0]) {
        assert!((got - want).abs() < 1e-12, "{a:?}");
    }
}

fn rss(x: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    let beta = (x.transpose() * x).try_inverse().unwrap() * x.transpose() * y;
    (y - x * beta).norm_squared()
}

/// Dummy-coded columns selected by name: `1`, `A`, `T`, `AT`.
fn dummy(ds: &LongDataset, cols: &[&str]) -> DMatrix<f64> {
    let obs = ds.observations();
    let mut out = Vec::new();
    for &c in cols {
        out.push(DVector::from_iterator(
            obs.len(),
            obs.iter().map(|o| match c {
                "1" => 1.0,
                "A" => (o.levels[0] == 1) as u8 as f64,
                "T" => (o.time == 2) as u8 as f64,
                _ => (o.levels[0] == 1 && o.time == 2) as u8 as f64,
            }),
        ));
    }
    DMatrix::from_columns(&out)
}

#[test]
fn fixed_anova_matches_nested_least_squares() {
    let ds = toy_two_way();
    let y = DVector::from_vec(ds.responses());
    let full = rss(&dummy(&ds, &["1", "A", "T", "AT"]), &y);
    let additive = rss(&dummy(&ds, &["1", "A", "T"]), &y);
    let no_a = rss(&dummy(&ds, &["1", "T"]), &y);
    let no_t = rss(&dummy(&ds, &["1", "A"]), &y);
    let (ss_at, ss_a, ss_t) = (additive - full, no_a - additive, no_t - additive);
    assert!((ss_a - 32.0).abs() < 1e-9 && (ss_t - 8.0).abs() < 1e-9 && ss_at.abs() < 1e-9 && (full - 8.0).abs() < 1e-9);

    let tab = anova_fixed(&ds).unwrap();
    let ss = |s: &str| tab.row(s).unwrap().ss;
    assert!((ss("A") - ss_a).abs() < 1e-9);
    assert!((ss("T") - ss_t).abs() < 1e-9);
    assert!((ss("A:T") - ss_at).abs() < 1e-9);
    assert!((ss("Residuals") - full).abs() < 1e-9);
}

fn sample(seed: u64) -> (LongDataset, dlmm_core::PseudoUnitAssignment) {
    let cfg = small_config(seed);
    let (_, ds) = simulate_destructive(&cfg).unwrap();
    let pa = assign_pseudo_units(&ds, cfg.g, GroupingStrategy::Rank, None).unwrap();
    (ds, pa)
}

/// SS of every row, after adding `shift(row)` to the responses.
fn ss_rows(ds: &LongDataset, pa: &dlmm_core::PseudoUnitAssignment, shift: &dyn Fn(usize) -> f64) -> Vec<Vec<(String, f64)>> {
    let y: Vec<f64> = ds.responses().iter().enumerate().map(|(i, v)| v + shift(i)).collect();
    let ds = ds.with_responses(&y).unwrap();
    [anova_fixed(&ds), anova_deaton(&ds), anova_proposed(&ds, pa)]
        .into_iter()
        .map(|t| t.unwrap().rows.into_iter().map(|r| (r.source, r.ss)).collect())
        .collect()
}

fn changed(before: &[Vec<(String, f64)>], after: &[Vec<(String, f64)>]) -> Vec<Vec<String>> {
    before
        .iter()
        .zip(after)
        .map(|(b, a)| {
            b.iter()
                .zip(a)
                .filter(|((_, x), (_, y))| (x - y).abs() > 1e-8 * (1.0 + x.abs()))
                .map(|((s, _), _)| s.clone())
                .collect()
        })
        .collect()
}

#[test]
fn variance_component_shifts_move_only_their_rows() {
    let (ds, pa) = sample(11);
    let base = ss_rows(&ds, &pa, &|_| 0.0);
    let eu = ds.eu_index().to_vec();
    let n = 3;

    // Unit offsets summing to zero inside each treatment.
    let unit = |i: usize| [3.0, -1.0, -2.0][eu[i] % n];
    assert_eq!(
        changed(&base, &ss_rows(&ds, &pa, &unit)),
        vec![vec!["Residuals".to_string()], vec!["b(A)".into()], vec!["b(A)".into()]]
    );

    // Pseudo-unit offsets summing to zero inside each experimental unit.
    let groups = pa.groups.clone();
    let pseudo = |i: usize| if groups[i] == 1 { 2.5 * (eu[i] + 1) as f64 } else { -2.5 * (eu[i] + 1) as f64 };
    let moved = changed(&base, &ss_rows(&ds, &pa, &pseudo));
    assert_eq!(moved[2], vec!["eta(b)".to_string()]);

    // A pure interaction pattern.
    let obs = ds.observations().to_vec();
    let inter = |i: usize| {
        let o = &obs[i];
        let s = if o.levels[0] == 0 { 1.0 } else { -1.0 };
        s * if o.time % 2 == 0 { 1.0 } else { -1.0 }
    };
    for rows in changed(&base, &ss_rows(&ds, &pa, &inter)) {
        assert_eq!(rows, vec!["A:T".to_string()]);
    }
}

#[test]
fn manova_eigenvalue_identities() {
    let (ds, pa) = sample(5);
    let mr = build_manova_responses(&ds, &pa).unwrap();
    let results = manova_all(&mr, &Term::canonical()).unwrap();
    assert_eq!(results.len(), 3);
    for r in &results {
        let prod: f64 = r.eigenvalues.iter().map(|l| 1.0 + l).product();
        assert!((r.statistics.wilks.statistic * prod - 1.0).abs() < 1e-10);
        if r.df == 1 {
            let st = &r.statistics;
            for t in [&st.wilks, &st.hotelling_lawley, &st.roy] {
                assert!((t.p - st.pillai.p).abs() < 1e-8, "{} vs {}", t.p, st.pillai.p);
            }
        }
    }
    let time = manova_test(&mr, &[Term::new(&["A"])], &ManovaHypothesis::Time).unwrap();
    assert_eq!(time.label(), TIME);
}

#[test]
fn single_eigenvalue_statistics() {
    let s = ManovaStatistics::from_eigenvalues(&[1.0], 1, 10);
    assert!((s.pillai.statistic - 0.5).abs() < 1e-12);
    assert!((s.hotelling_lawley.statistic - 1.0).abs() < 1e-12);
    assert!((s.wilks.statistic - 0.5).abs() < 1e-12);
    assert!((s.roy.statistic - 0.5).abs() < 1e-12);
}

#[test]
fn distribution_tails() {
    // Two-sided t test with t = 2 on 10 df.
    assert!((f_sf(4.0, 1.0, 10.0) - 0.073_388_03).abs() < 1e-7);
    assert!((chi2_sf(3.841_458_820_694_124, 1.0) - 0.05).abs() < 1e-10);
    assert!((normal_cdf(1.959_963_984_540_054) - 0.975).abs() < 1e-12);
}

#[test]
fn acf_of_a_linear_series() {
    let s: Vec<f64> = (1..=10).map(f64::from).collect();
    let r = acf(&s, 3).unwrap();
    for (got, want) in r.iter().zip([0.7, 0.412_121_2, 0.148_484_8]) {
        assert!((got - want).abs() < 1e-6, "{r:?}");
    }
}

#[test]
fn bartlett_insect_sprays() {
    let groups: Vec<Vec<f64>> = [
        [10, 7, 20, 14, 14, 12, 10, 23, 17, 20, 14, 13],
        [11, 17, 21, 11, 16, 14, 17, 17, 19, 21, 7, 13],
        [0, 1, 7, 2, 3, 1, 2, 1, 3, 0, 1, 4],
        [3, 5, 12, 6, 4, 3, 5, 5, 5, 5, 2, 4],
        [3, 5, 3, 5, 3, 6, 1, 1, 3, 2, 6, 4],
        [11, 9, 15, 22, 15, 16, 13, 10, 26, 26, 24, 13],
    ]
    .iter()
    .map(|g| g.iter().map(|&v| v as f64).collect())
    .collect();
    let r = bartlett(&groups).unwrap();
    assert!((r.statistic - 25.96).abs() < 0.01, "{}", r.statistic);
    assert!((r.p - 9.085e-5).abs() < 1e-7, "{}", r.p);
}

#[test]
fn fitted_values_are_on_the_observation_scale() {
    let (ds, pa) = sample(3);
    for kind in ModelKind::ALL {
        let f = fit_model(kind, &ds, &Term::canonical(), Some(&pa), Criterion::Reml).unwrap();
        assert_eq!(f.fitted.len(), ds.len(), "{kind}");
        assert!(f.mse.is_finite() && f.mse >= 0.0);
    }
}
