use std::sync::Arc;

use projdist::fixtures::{enumerate_plans, generate_grid_map, pack_crack_north, sample_plans, GridSpec, PartisanModel};
use projdist::inference::{
    estimate_pi0, fwer_validation, lineup, null_pvalue_matrix, pfdr_curve, precinct_pvalues, pvalues_against,
    rejection_counts, select_threshold, st_procedure, GammaGrid, ProjectiveDistribution, Sidedness, StAnalysis,
};
use projdist::model::{Ensemble, PrecinctMap};
use projdist::projection::project;
use projdist::stats::{DistrictValues, Statistic, StatisticSpec};
use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn hotspot(rows: usize, cols: usize, seed: u64) -> Arc<PrecinctMap> {
    let spec = GridSpec::uniform(rows, cols)
        .with_partisan(PartisanModel::Hotspot {
            row: 0.0,
            col: (cols as f64 - 1.0) / 2.0,
            radius: 3.0,
            intensity: 0.45,
            base: 0.35,
        })
        .with_noise(0.02, seed);
    Arc::new(generate_grid_map(&spec).unwrap())
}

fn dem(map: &PrecinctMap) -> Statistic {
    Statistic::compile(map, &StatisticSpec::dem_share()).unwrap()
}

fn naive_count(row: &[f64], x: f64, side: Sidedness) -> u32 {
    let ge = row.iter().filter(|&&y| y >= x).count() as u32;
    let le = row.iter().filter(|&&y| y <= x).count() as u32;
    match side {
        Sidedness::Upper => ge,
        Sidedness::Lower => le,
        Sidedness::TwoSided => ge.min(le),
    }
}

#[test]
fn pvalues_match_brute_force_on_enumerated_fixture() {
    let spec = GridSpec::uniform(2, 3)
        .with_partisan(PartisanModel::LinearGradient { west: 0.3, east: 0.7 })
        .with_noise(0.05, 1);
    let map = Arc::new(generate_grid_map(&spec).unwrap());
    let plans = enumerate_plans(&map, 2, 0.0).unwrap();
    let ensemble = Ensemble::from_plans(map.clone(), &plans).unwrap();
    let stat = dem(&map);
    let n = plans.len();
    let projected: Vec<Vec<f64>> = plans
        .iter()
        .map(|p| project(p.view(), &stat.evaluate(&map, p.view()).unwrap()).to_dense())
        .collect();
    for side in [Sidedness::Upper, Sidedness::Lower, Sidedness::TwoSided] {
        for (k, plan) in plans.iter().enumerate() {
            let got = precinct_pvalues(&map, plan.view(), &ensemble, &stat, side).unwrap();
            for v in 0..6 {
                let row: Vec<f64> = projected.iter().map(|x| x[v]).collect();
                let c = naive_count(&row, projected[k][v], side) as f64;
                let raw = match side {
                    Sidedness::TwoSided => 2.0 * (1.0 + c) / n as f64,
                    _ => (1.0 + c) / n as f64,
                };
                assert_eq!(got.raw[v], raw);
                assert_eq!(got.get(v), raw.min(1.0));
            }
        }
    }
}

#[test]
fn null_pvalue_examples() {
    let dist = ProjectiveDistribution::from_rows(1, 5, vec![0.1, 0.2, 0.9, 0.3, 0.4]);
    let nulls = null_pvalue_matrix(&dist, Sidedness::Upper);
    assert_eq!(nulls.pvalue(0, 2), 2.0 / 5.0);
    let same = ProjectiveDistribution::from_rows(2, 4, vec![0.5; 8]);
    let nulls = null_pvalue_matrix(&same, Sidedness::Upper);
    assert!((0..2).all(|v| (0..4).all(|i| nulls.pvalue(v, i) == 1.0)));
    let above = pvalues_against(&[1.0], &dist, Sidedness::Upper);
    assert_eq!(above.get(0), 1.0 / 5.0);
}

#[test]
fn rejection_counts_match_recount() {
    let map = hotspot(6, 6, 2);
    let ensemble = sample_plans(map.clone(), 4, 120, 0.1, 2).unwrap();
    let values = DistrictValues::evaluate(&ensemble, &dem(&map)).unwrap();
    let dist = ProjectiveDistribution::from_ensemble(&ensemble, &values);
    let observed = pvalues_against(&dist.column(5), &dist, Sidedness::TwoSided);
    let nulls = null_pvalue_matrix(&dist, Sidedness::TwoSided);
    let grid = GammaGrid::default_for(120);
    let (r, summary) = rejection_counts(&observed, &nulls, &grid).unwrap();
    for (g, &gamma) in grid.values().iter().enumerate() {
        let direct_r = (0..36).filter(|&v| observed.get(v) <= gamma).count();
        assert_eq!(r[g], direct_r);
        let mut total = 0usize;
        for i in 0..120 {
            let field = nulls.plan_field(i);
            let count = (0..36).filter(|&v| field.get(v) <= gamma).count();
            assert_eq!(summary.plan_counts(i)[g] as usize, count);
            total += count;
        }
        assert!((summary.rbar0[g] - total as f64 / 120.0).abs() < 1e-12);
    }
    assert_eq!(*r.last().unwrap(), 36);
    assert_eq!(*summary.rbar0.last().unwrap(), 36.0);
    let low = GammaGrid::new(vec![1e-6, 0.5, 1.0]).unwrap();
    assert_eq!(rejection_counts(&observed, &nulls, &low).unwrap().0[0], 0);
    assert!(GammaGrid::new(vec![]).is_err());

    let pi0 = estimate_pi0(r[grid.position(0.5).unwrap()], summary.rbar0[grid.position(0.5).unwrap()], 36);
    let curve = pfdr_curve(pi0, &r, &summary.rbar0, &grid);
    for (g, &(gamma, p)) in curve.iter().enumerate() {
        assert_eq!(gamma, grid.values()[g]);
        if r[g] == 0 {
            assert!(p.is_infinite());
        } else {
            assert_eq!(p, pi0 * summary.rbar0[g] / r[g] as f64);
        }
    }
}

#[test]
fn pi0_and_curve_examples() {
    assert_eq!(estimate_pi0(50, 50.0, 100), 1.0);
    assert!((estimate_pi0(80, 50.0, 100) - 0.4).abs() < 1e-15);
    let grid = GammaGrid::new(vec![0.1, 0.5, 1.0]).unwrap();
    let flat = pfdr_curve(1.0, &[5, 20, 30], &[5.0, 20.0, 30.0], &grid);
    assert!(flat.iter().all(|&(_, p)| p == 1.0));
    assert_eq!(select_threshold(&flat, 0.05), None);
    let curve = pfdr_curve(0.5, &[40, 40, 40], &[10.0, 10.0, 10.0], &grid);
    assert_eq!(curve[0].1, 0.125);
    assert_eq!(select_threshold(&curve, 0.2), Some(1.0));
    assert_eq!(select_threshold(&curve, 0.0), None);
}

#[test]
fn threshold_interpolates_on_envelope() {
    let curve = vec![(0.1, 0.02), (0.2, 0.5), (0.5, 0.06), (1.0, 0.3)];
    // Envelope: 0.02, 0.06, 0.06, 0.3; the last crossing of 0.1 lies in (0.5, 1.0).
    let g = select_threshold(&curve, 0.1).unwrap();
    let expect = 0.5 + (0.1 - 0.06) / (0.3 - 0.06) * 0.5;
    assert!((g - expect).abs() < 1e-15);
    assert_eq!(select_threshold(&curve, 0.06), Some(0.5));
}

#[test]
fn gamma_hat_stable_under_grid_refinement() {
    let map = hotspot(10, 10, 3);
    let planted = pack_crack_north(&map, 10, 10, (0.0, 4.5), 0.05).unwrap();
    let ensemble = sample_plans(map.clone(), 4, 600, 0.05, 3).unwrap();
    let stat = dem(&map);
    let values = DistrictValues::evaluate(&ensemble, &stat).unwrap();
    let dist = ProjectiveDistribution::from_ensemble(&ensemble, &values);
    let observed = project(planted.plan.view(), &stat.evaluate(&map, planted.plan.view()).unwrap()).to_dense();
    let coarse = GammaGrid::default_for(600);
    let fine = coarse.refined(10);
    assert!(fine.position(0.5).is_some());
    let mut compared = 0;
    for side in [Sidedness::Upper, Sidedness::TwoSided] {
        let a = StAnalysis::compute(&observed, &dist, side, Some(&coarse)).unwrap();
        let b = StAnalysis::compute(&observed, &dist, side, Some(&fine)).unwrap();
        for alpha in [0.01, 0.05, 0.1, 0.2] {
            let (Some(g0), Some(g1)) = (a.select(alpha).gamma_hat, b.select(alpha).gamma_hat) else {
                continue;
            };
            let gs = coarse.values();
            let k = gs.iter().rposition(|&x| x <= g0).unwrap();
            let lo = gs[k.saturating_sub(1)];
            let hi = gs[(k + 2).min(gs.len() - 1)];
            assert!(lo <= g1 && g1 <= hi, "{side} alpha={alpha}: coarse {g0}, fine {g1}");
            compared += 1;
        }
    }
    assert!(compared >= 4);
}

#[test]
fn ensemble_member_rarely_selects_anything() {
    let map = hotspot(10, 10, 4);
    let ensemble = sample_plans(map.clone(), 4, 1000, 0.05, 4).unwrap();
    let values = DistrictValues::evaluate(&ensemble, &dem(&map)).unwrap();
    let dist = ProjectiveDistribution::from_ensemble(&ensemble, &values);
    let empty = (0..100)
        .filter(|&i| {
            let analysis = StAnalysis::compute(&dist.column(i * 10), &dist, Sidedness::Upper, None).unwrap();
            analysis.select(0.05).selected.is_empty()
        })
        .count();
    assert!(empty >= 95, "{empty}/100 empty");
}

#[test]
fn planted_plan_selection_concentrates_on_perturbed_precincts() {
    let map = hotspot(10, 10, 5);
    let planted = pack_crack_north(&map, 10, 10, (0.0, 4.5), 0.05).unwrap();
    let ensemble = sample_plans(map.clone(), 4, 1000, 0.05, 5).unwrap();
    let result = st_procedure(&map, planted.plan.view(), &ensemble, &dem(&map), 0.05, Sidedness::TwoSided, None).unwrap();
    assert!(result.discoveries > 0);
    let inside = result.selected.iter().filter(|&&v| planted.perturbed[v]).count();
    assert!(inside as f64 >= 0.9 * result.discoveries as f64);
    let sidecar = result.sidecar();
    assert_eq!(sidecar["alpha"], 0.05);
    assert!(sidecar["gamma_hat"].is_number());
    assert_eq!(sidecar["curve"].as_array().unwrap().len(), result.curve.len());
}

#[test]
fn lineup_contract() {
    let map = hotspot(6, 6, 6);
    let ensemble = sample_plans(map.clone(), 4, 50, 0.05, 6).unwrap();
    let stat = dem(&map);
    let values = DistrictValues::evaluate(&ensemble, &stat).unwrap();
    let plan0 = sample_plans(map.clone(), 4, 1, 0.05, 60).unwrap();
    let own = project(plan0.plan(0), &stat.evaluate(&map, plan0.plan(0)).unwrap());
    let zero = lineup(&ensemble, &values, &own, 0, 1, false).unwrap();
    assert_eq!((zero.panels.len(), zero.answer), (1, 0));
    let seven = lineup(&ensemble, &values, &own, 7, 2, false).unwrap();
    assert_eq!(seven.panels.len(), 8);
    assert_eq!(seven.sources[seven.answer], None);
    assert_eq!(seven.sources.iter().flatten().count(), 7);
    assert_eq!(lineup(&ensemble, &values, &own, 7, 2, false).unwrap(), seven);
    assert!(lineup(&ensemble, &values, &own, 51, 2, false).is_err());
    let z = lineup(&ensemble, &values, &own, 7, 2, true).unwrap();
    assert_eq!(z.answer, seven.answer);

    let mut counts = [0u32; 8];
    for seed in 0..1000 {
        counts[lineup(&ensemble, &values, &own, 7, seed, false).unwrap().answer] += 1;
    }
    let expected = 1000.0 / 8.0;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new(7.0).unwrap().cdf(stat);
    assert!(p > 0.01, "chi-square {stat}, p = {p}, counts {counts:?}");
}

#[test]
fn fwer_harness_contract() {
    let map = hotspot(6, 6, 7);
    let ensemble = sample_plans(map.clone(), 4, 100, 0.05, 7).unwrap();
    let values = DistrictValues::evaluate(&ensemble, &dem(&map)).unwrap();
    let alphas = [0.05, 0.2];
    assert!(fwer_validation(&ensemble, &values, &alphas, Sidedness::Upper, 0, 1).unwrap().rows.is_empty());
    assert!(fwer_validation(&ensemble, &values, &alphas, Sidedness::Upper, 51, 1).is_err());
    let a = fwer_validation(&ensemble, &values, &alphas, Sidedness::Upper, 30, 9).unwrap();
    let b = fwer_validation(&ensemble, &values, &alphas, Sidedness::Upper, 30, 9).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.holdout_plans.len(), 30);
    for row in &a.rows {
        assert_eq!(row.fwer, row.rejections as f64 / 30.0);
        assert!((row.se - (row.fwer * (1.0 - row.fwer) / 30.0).sqrt()).abs() < 1e-15);
    }
    assert!(a.rows[0].rejections <= a.rows[1].rejections);
}

#[test]
fn inference_identical_across_thread_counts() {
    let map = hotspot(8, 8, 8);
    let ensemble = sample_plans(map.clone(), 4, 300, 0.05, 8).unwrap();
    let values = DistrictValues::evaluate(&ensemble, &dem(&map)).unwrap();
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| {
            let dist = ProjectiveDistribution::from_ensemble(&ensemble, &values);
            (
                null_pvalue_matrix(&dist, Sidedness::TwoSided),
                fwer_validation(&ensemble, &values, &[0.1], Sidedness::Upper, 40, 3).unwrap(),
            )
        })
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn sidedness_parsing() {
    assert_eq!("upper".parse::<Sidedness>().unwrap(), Sidedness::Upper);
    assert_eq!("two".parse::<Sidedness>().unwrap(), Sidedness::TwoSided);
    assert_eq!("lower".parse::<Sidedness>().unwrap(), Sidedness::Lower);
    assert!("both".parse::<Sidedness>().is_err());
}

fn side_strategy() -> impl Strategy<Value = Sidedness> {
    prop_oneof![Just(Sidedness::Upper), Just(Sidedness::Lower), Just(Sidedness::TwoSided)]
}

proptest! {
    #[test]
    fn rank_lookup_equals_naive(
        rows in prop::collection::vec(prop::collection::vec(0u8..6, 12), 1..6),
        side in side_strategy(),
    ) {
        let n = rows[0].len();
        let flat: Vec<f64> = rows.iter().flatten().map(|&x| x as f64 / 5.0).collect();
        let dist = ProjectiveDistribution::from_rows(rows.len(), n, flat);
        let fast = null_pvalue_matrix(&dist, side);
        for v in 0..rows.len() {
            let row = dist.row(v);
            for (i, &x) in row.iter().enumerate() {
                prop_assert_eq!(fast.count(v, i), naive_count(row, x, side));
            }
        }
    }

    #[test]
    fn pvalues_in_unit_interval(
        row in prop::collection::vec(-3.0f64..3.0, 1..40),
        x in -4.0f64..4.0,
        side in side_strategy(),
    ) {
        let n = row.len();
        let dist = ProjectiveDistribution::from_rows(1, n, row);
        let p = pvalues_against(&[x], &dist, side);
        prop_assert!(p.get(0) > 0.0 && p.get(0) <= 1.0);
        let cap = if side == Sidedness::TwoSided { 2.0 } else { 1.0 } * (n as f64 + 1.0) / n as f64;
        prop_assert!(p.raw[0] <= cap);
        prop_assert!(p.raw[0] >= 1.0 / n as f64);
    }

    #[test]
    fn envelope_threshold_monotone_in_alpha(
        pfdr in prop::collection::vec(0.0f64..1.5, 2..20),
        a in 0.0f64..1.0,
        b in 0.0f64..1.0,
    ) {
        let k = pfdr.len();
        let curve: Vec<(f64, f64)> = pfdr.iter().enumerate().map(|(i, &p)| ((i + 1) as f64 / k as f64, p)).collect();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        if let Some(g_lo) = select_threshold(&curve, lo) {
            let g_hi = select_threshold(&curve, hi);
            prop_assert!(g_hi.is_some_and(|g| g >= g_lo));
        }
    }
}
