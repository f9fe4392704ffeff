mod common;

use common::*;
use dlmm_core::anova::{anova_deaton, anova_fixed, anova_proposed};
use dlmm_core::data::build_design;
use dlmm_core::diagnostics::{acf, anderson_darling, bartlett};
use dlmm_core::grouping::assign_pseudo_units;
use dlmm_core::lmm::{fit, Criterion};
use dlmm_core::manova::{build_manova_responses, manova_test, ManovaStatistics};
use dlmm_core::simulate::simulate_destructive;
use dlmm_core::{AnovaTable, GroupingStrategy, LongDataset, ManovaHypothesis, Observation, RandomTerm, Term};
use proptest::prelude::*;

/// Complete M x t grid with `reps` observations per cell, one unit each.
fn grid(m: usize, t: usize, reps: usize, ys: &[f64]) -> LongDataset {
    let mut rows = Vec::new();
    let mut i = 0;
    for a in 0..m {
        for k in 1..=t as u32 {
            for r in 0..reps {
                rows.push(obs(&format!("{a}-{r}"), &k.to_string(), k, vec![a], ys[i % ys.len()]));
                i += 1;
            }
        }
    }
    LongDataset::new(vec![treatment(m)], rows).unwrap()
}

fn tables(ds: &LongDataset, g: usize) -> Vec<AnovaTable> {
    let pa = assign_pseudo_units(ds, g, GroupingStrategy::Rank, None).unwrap();
    vec![anova_fixed(ds).unwrap(), anova_deaton(ds).unwrap(), anova_proposed(ds, &pa).unwrap()]
}

fn sample(seed: u64) -> LongDataset {
    simulate_destructive(&small_config(seed)).unwrap().1
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn encode_inverts_decode(m in 2usize..5, t in 2usize..5, beta in prop::collection::vec(-10.0f64..10.0, 16)) {
        let ds = grid(m, t, 1, &[1.0]);
        let dm = build_design(&ds, &Term::canonical(), &[], None).unwrap();
        let beta = &beta[..dm.n_fixed()];
        let effects = dm.decode(beta).unwrap();
        for e in &effects[1..] {
            // Every margin of a sum-to-zero table vanishes.
            for (axis, &d) in e.dims.iter().enumerate() {
                let stride: usize = e.dims[axis + 1..].iter().product();
                let outer: usize = e.dims[..axis].iter().product();
                for o in 0..outer {
                    for inner in 0..stride {
                        let s: f64 = (0..d).map(|l| e.values[(o * d + l) * stride + inner]).sum();
                        prop_assert!(s.abs() < 1e-10);
                    }
                }
            }
        }
        let back = dm.encode(&effects).unwrap();
        for (a, b) in back.iter().zip(beta) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rank_grouping_invariants(ys in prop::collection::vec(-50.0f64..50.0, 2..40), g in 1usize..4, seed in any::<u64>()) {
        prop_assume!(ys.len() >= 2 * g);
        let rows: Vec<Observation> = ys.iter().enumerate()
            .map(|(i, &y)| obs(if i % 2 == 0 { "a" } else { "b" }, &i.to_string(), 1, vec![], y))
            .collect();
        let ds = LongDataset::new(vec![], rows.clone()).unwrap();
        let pa = assign_pseudo_units(&ds, g, GroupingStrategy::Rank, None).unwrap();
        prop_assert_eq!(pa.groups.len(), ds.len());
        for eu in ["a", "b"] {
            let idx: Vec<usize> = (0..ds.len()).filter(|&i| ds.observations()[i].eu == eu).collect();
            let mut sizes = vec![0usize; g];
            for &i in &idx {
                sizes[pa.groups[i] - 1] += 1;
            }
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            for r in 1..g {
                let hi = idx.iter().filter(|&&i| pa.groups[i] == r).map(|&i| ys[i]).fold(f64::MIN, f64::max);
                let lo = idx.iter().filter(|&&i| pa.groups[i] == r + 1).map(|&i| ys[i]).fold(f64::MAX, f64::min);
                prop_assert!(hi <= lo);
            }
        }
        // Same call, same answer.
        prop_assert_eq!(&assign_pseudo_units(&ds, g, GroupingStrategy::Rank, None).unwrap(), &pa);
        // Row order does not matter when responses are distinct.
        let mut distinct = ys.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        if distinct.len() == ys.len() {
            let mut perm: Vec<usize> = (0..rows.len()).collect();
            let mut s = seed;
            for i in (1..perm.len()).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                perm.swap(i, (s >> 33) as usize % (i + 1));
            }
            let shuffled = LongDataset::new(vec![], perm.iter().map(|&i| rows[i].clone()).collect()).unwrap();
            let pb = assign_pseudo_units(&shuffled, g, GroupingStrategy::Rank, None).unwrap();
            for (pos, &i) in perm.iter().enumerate() {
                prop_assert_eq!(pb.groups[pos], pa.groups[i]);
            }
        }
    }

    #[test]
    fn acf_is_affine_invariant(xs in prop::collection::vec(-5.0f64..5.0, 5..60), a in 0.1f64..10.0, b in -100.0f64..100.0) {
        let ys: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
        let r1 = acf(&xs, 4).unwrap();
        let r2 = acf(&ys, 4).unwrap();
        for (u, v) in r1.iter().zip(&r2) {
            prop_assert!((u - v).abs() < 1e-8);
        }
    }

    #[test]
    fn anderson_darling_location_scale(xs in prop::collection::vec(-5.0f64..5.0, 8..80), a in 0.1f64..10.0, b in -100.0f64..100.0) {
        let Ok(r1) = anderson_darling(&xs) else { return Ok(()) };
        let ys: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
        let r2 = anderson_darling(&ys).unwrap();
        prop_assert!((r1.statistic - r2.statistic).abs() < 1e-8 * (1.0 + r1.statistic));
        prop_assert!((r1.p - r2.p).abs() < 1e-8);
    }

    #[test]
    fn bartlett_scale_invariant(groups in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3..10), 2..5), c in 0.01f64..100.0) {
        let Ok(r1) = bartlett(&groups) else { return Ok(()) };
        let scaled: Vec<Vec<f64>> = groups.iter().map(|g| g.iter().map(|v| c * v).collect()).collect();
        let r2 = bartlett(&scaled).unwrap();
        prop_assert!((r1.statistic - r2.statistic).abs() < 1e-7 * (1.0 + r1.statistic));
    }

    #[test]
    fn wilks_times_product_is_one(eig in prop::collection::vec(0.0f64..20.0, 1..6), q in 1usize..4, extra in 1usize..30) {
        let df_res = eig.len() + q + extra;
        let s = ManovaStatistics::from_eigenvalues(&eig, q, df_res);
        let prod: f64 = eig.iter().map(|l| 1.0 + l).product();
        prop_assert!((s.wilks.statistic * prod - 1.0).abs() < 1e-10);
        if q == 1 {
            // One hypothesis degree of freedom leaves a single nonzero eigenvalue.
            let mut single = vec![0.0; eig.len()];
            single[0] = eig[0];
            let s = ManovaStatistics::from_eigenvalues(&single, q, df_res);
            for t in [&s.wilks, &s.hotelling_lawley, &s.roy] {
                prop_assert!((t.p - s.pillai.p).abs() < 1e-8);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn anova_sums_and_shift_invariance(seed in any::<u64>(), shift in -1e3f64..1e3, scale in 0.1f64..10.0) {
        let ds = sample(seed);
        let base = tables(&ds, 2);
        for t in &base {
            let sum: f64 = t.rows.iter().map(|r| r.ss).sum();
            prop_assert!((sum - t.total_ss).abs() < 1e-8 * t.total_ss.max(1.0));
        }
        let moved = ds.with_responses(&ds.responses().iter().map(|y| scale * y + shift).collect::<Vec<_>>()).unwrap();
        for (a, b) in base.iter().zip(&tables(&moved, 2)) {
            for (ra, rb) in a.rows.iter().zip(&b.rows) {
                prop_assert!((ra.ss * scale * scale - rb.ss).abs() < 1e-7 * (1.0 + rb.ss));
                if let (Some(fa), Some(fb)) = (ra.f, rb.f) {
                    prop_assert!((fa - fb).abs() < 1e-7 * (1.0 + fa));
                }
            }
        }
    }

    #[test]
    fn manova_between_test_is_invariant_under_linear_maps(seed in any::<u64>(), p in prop::collection::vec(-1.0f64..1.0, 16)) {
        let ds = sample(seed);
        let pa = assign_pseudo_units(&ds, 2, GroupingStrategy::Rank, None).unwrap();
        let mr = build_manova_responses(&ds, &pa).unwrap();
        let t = mr.times();
        // Diagonally dominant, hence invertible.
        let map = |i: usize, j: usize| if i == j { 4.0 + p[i * t + j] } else { 0.5 * p[i * t + j] };
        let mut mapped = mr.clone();
        for row in mapped.y.iter_mut() {
            let old = row.clone();
            for i in 0..t {
                row[i] = (0..t).map(|j| map(i, j) * old[j]).sum();
            }
        }
        let a = vec![Term::new(&["A"])];
        let h = ManovaHypothesis::Between(Term::new(&["A"]));
        let r1 = manova_test(&mr, &a, &h).unwrap();
        let r2 = manova_test(&mapped, &a, &h).unwrap();
        prop_assert!((r1.statistics.pillai.statistic - r2.statistics.pillai.statistic).abs() < 1e-8);
        prop_assert!((r1.statistics.wilks.p - r2.statistics.wilks.p).abs() < 1e-8);
    }

    #[test]
    fn fits_do_not_depend_on_row_order(seed in any::<u64>()) {
        let ds = sample(seed);
        let pa = assign_pseudo_units(&ds, 2, GroupingStrategy::Rank, None).unwrap();
        let terms = [RandomTerm::ExperimentalUnit, RandomTerm::PseudoUnit];
        let dm = build_design(&ds, &Term::canonical(), &terms, Some(&pa)).unwrap();
        let f1 = fit(&dm, &ds.responses(), Criterion::Reml).unwrap();

        let rev: Vec<Observation> = ds.observations().iter().rev().cloned().collect();
        let ds2 = LongDataset::new(ds.factors().to_vec(), rev).unwrap();
        let mut pa2 = pa.clone();
        pa2.groups.reverse();
        let dm2 = build_design(&ds2, &Term::canonical(), &terms, Some(&pa2)).unwrap();
        let f2 = fit(&dm2, &ds2.responses(), Criterion::Reml).unwrap();
        prop_assert!((f1.deviance - f2.deviance).abs() < 1e-6 * (1.0 + f1.deviance.abs()));
        for (a, b) in [(f1.vc.sigma_b2, f2.vc.sigma_b2), (f1.vc.sigma_eta2, f2.vc.sigma_eta2), (f1.vc.sigma_eps2, f2.vc.sigma_eps2)] {
            prop_assert!((a - b).abs() < 1e-4 * (1.0 + a), "{} vs {}", a, b);
        }
    }
}
