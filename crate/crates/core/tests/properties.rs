use cardmatch_core::data::{Dataset, UnitRecord};
use cardmatch_core::diagnostics::{balance_report, smd};
use cardmatch_core::outcome::{mcnemar_test, two_proportion_ztest};
use cardmatch_core::pairing::{distance, solve_assignment, Metric};
use cardmatch_core::problem::{compile_problem, verify_solution, BalanceSpec};
use cardmatch_core::solver::{branch_and_bound, SolverLimits};
use proptest::prelude::*;

fn records(units: &[(bool, f64, f64, u8)]) -> Vec<UnitRecord> {
    units
        .iter()
        .enumerate()
        .map(|(i, &(e, x, z, s))| UnitRecord {
            id: format!("u{i:03}"),
            exposed: e,
            raw: vec![x, z],
            exact_keys: vec![format!("s{s}")],
            outcome: None,
        })
        .collect()
}

fn unit_strategy() -> impl Strategy<Value = Vec<(bool, f64, f64, u8)>> {
    prop::collection::vec((any::<bool>(), -5.0..5.0f64, -5.0..5.0f64, 0u8..3), 6..18).prop_filter(
        "both groups with two or more members",
        |v| v.iter().filter(|u| u.0).count() >= 2 && v.iter().filter(|u| !u.0).count() >= 2,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn strata_partition_the_units(units in unit_strategy()) {
        let ds = Dataset::from_records(records(&units), vec!["x".into(), "z".into()], vec!["s".into()]).unwrap();
        let mut all: Vec<usize> = ds.strata.iter().flat_map(|s| s.members.clone()).collect();
        all.sort();
        prop_assert_eq!(all, (0..units.len()).collect::<Vec<_>>());
        for (s, st) in ds.strata.iter().enumerate() {
            for &m in &st.members {
                prop_assert_eq!(ds.stratum_of[m], s);
            }
        }
    }

    #[test]
    fn standardized_values_are_affine_invariant(units in unit_strategy(), a in 0.1..10.0f64, b in -50.0..50.0f64) {
        let ds = Dataset::from_records(records(&units), vec!["x".into(), "z".into()], vec!["s".into()]).unwrap();
        let moved: Vec<_> = units.iter().map(|&(e, x, z, s)| (e, a * x + b, z, s)).collect();
        let ds2 = Dataset::from_records(records(&moved), vec!["x".into(), "z".into()], vec!["s".into()]).unwrap();
        for (u, v) in ds.units.iter().zip(&ds2.units) {
            prop_assert!((u.covariates[0] - v.covariates[0]).abs() < 1e-9);
        }
        let sel_t: Vec<String> = ds.units.iter().filter(|u| u.exposed).take(2).map(|u| u.id.clone()).collect();
        let sel_c: Vec<String> = ds.units.iter().filter(|u| !u.exposed).take(2).map(|u| u.id.clone()).collect();
        let r1 = balance_report(&ds, &sel_t, &sel_c, None, None).unwrap();
        let r2 = balance_report(&ds2, &sel_t, &sel_c, None, None).unwrap();
        let s1 = r1.covariates[0].after.as_ref().unwrap().smd;
        let s2 = r2.covariates[0].after.as_ref().unwrap().smd;
        prop_assert!((s1 - s2).abs() < 1e-10);
        prop_assert!((r1.covariates[0].before.smd - r2.covariates[0].before.smd).abs() < 1e-10);
    }

    #[test]
    fn restandardizing_is_idempotent(units in unit_strategy()) {
        let ds = Dataset::from_records(records(&units), vec!["x".into(), "z".into()], vec!["s".into()]).unwrap();
        let again = ds.standardize().unwrap();
        for (u, v) in ds.units.iter().zip(&again.units) {
            for (p, q) in u.covariates.iter().zip(&v.covariates) {
                prop_assert!((p - q).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn smd_matches_direct_recomputation(t in prop::collection::vec(-3.0..3.0f64, 1..20), c in prop::collection::vec(-3.0..3.0f64, 1..20), sd in 0.1..4.0f64) {
        let mut mt = 0.0;
        for v in &t { mt += v; }
        let mut mc = 0.0;
        for v in &c { mc += v; }
        let want = (mt / t.len() as f64 - mc / c.len() as f64) / sd;
        prop_assert!((smd(&t, &c, sd) - want).abs() < 1e-12);
    }

    #[test]
    fn solver_output_verifies_and_respects_bounds(units in unit_strategy(), delta in 0.05..0.5f64) {
        let ds = Dataset::from_records(records(&units), vec!["x".into(), "z".into()], vec!["s".into()]).unwrap();
        let spec = BalanceSpec::uniform(2, delta);
        let Ok(p) = compile_problem(&ds, &spec, None) else { return Ok(()); };
        let sol = branch_and_bound(&p, &SolverLimits::default()).unwrap();
        prop_assert!(verify_solution(&p, &sol).pass);
        let r = balance_report(&ds, &sol.treated_ids, &sol.control_ids, Some(&spec), None).unwrap();
        prop_assert!(r.breaches.is_empty());
        prop_assert_eq!(r.retention.exposed_kept, sol.n);
        prop_assert_eq!(r.retention.unexposed_kept, sol.n);
        prop_assert!(sol.n <= ds.n_treated() && sol.n <= ds.n_control());
    }

    #[test]
    fn ztest_group_swap_symmetry(n in 1u64..400, a in 0u64..400, b in 0u64..400) {
        let (a, b) = (a % (n + 1), b % (n + 1));
        let x = two_proportion_ztest(a, b, n, false).unwrap();
        let y = two_proportion_ztest(b, a, n, false).unwrap();
        prop_assert!((x.estimate + y.estimate).abs() < 1e-15);
        prop_assert!((x.statistic + y.statistic).abs() < 1e-12);
        prop_assert!((x.p_value - y.p_value).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&x.p_value));
        prop_assert_eq!(x.proportion_treated, Some(a as f64 / n as f64));
    }

    #[test]
    fn mcnemar_is_symmetric_and_bounded(b in 0u64..80, c in 0u64..80) {
        let x = mcnemar_test(b, c, false);
        let y = mcnemar_test(c, b, false);
        prop_assert_eq!(x.p_value, y.p_value);
        prop_assert!((0.0..=1.0).contains(&x.p_value));
    }

    #[test]
    fn assignment_is_exchange_stable(pts in prop::collection::vec((-2.0..2.0f64, -2.0..2.0f64), 2..30)) {
        let n = pts.len() / 2;
        prop_assume!(n >= 1);
        let t: Vec<[f64; 2]> = pts[..n].iter().map(|&(a, b)| [a, b]).collect();
        let c: Vec<[f64; 2]> = pts[n..2 * n].iter().map(|&(a, b)| [a, b]).collect();
        let cost = |i: usize, j: usize| distance(&t[i], &c[j], Metric::L2);
        let a = solve_assignment(n, cost);
        let m = &a.col_of_row;
        for x in 0..n {
            for y in x + 1..n {
                prop_assert!(cost(x, m[y]) + cost(y, m[x]) >= cost(x, m[x]) + cost(y, m[y]) - 1e-9);
            }
        }
    }
}

#[test]
fn ztest_p_decreases_as_exposed_events_grow() {
    let n = 200;
    let control = 20;
    let mut prev = two_proportion_ztest(control, control, n, false).unwrap().p_value;
    for events in control + 1..=n {
        let p = two_proportion_ztest(events, control, n, false).unwrap().p_value;
        assert!(p <= prev + 1e-15, "events {events}: {p} > {prev}");
        prev = p;
    }
}
