use cardmatch_core::problem::{compile_problem, verify_solution, BalanceSpec};
use cardmatch_core::solver::{branch_and_bound, enumerate_oracle, SolveStatus, SolverLimits};
use cardmatch_core::synth::{random_instance, RandomInstanceOptions};

fn group_spec(k: usize, delta: f64) -> BalanceSpec {
    BalanceSpec::uniform(k, delta)
}

#[test]
fn branch_and_bound_equals_enumeration() {
    let opts = RandomInstanceOptions::default();
    for seed in 0..100 {
        let ds = random_instance(seed, &opts);
        let p = compile_problem(&ds, &group_spec(2, 0.2), None).unwrap();
        let expected = enumerate_oracle(&p).unwrap();
        let sol = branch_and_bound(&p, &SolverLimits::default()).unwrap();
        assert_eq!(sol.n, expected, "seed {seed}");
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert_eq!(sol.bound, sol.n);
        assert!(verify_solution(&p, &sol).pass, "seed {seed}");
    }
}

#[test]
fn optimum_nondecreasing_when_tolerances_double() {
    let opts = RandomInstanceOptions::default();
    for seed in 100..160 {
        let ds = random_instance(seed, &opts);
        let spec = group_spec(2, 0.1);
        let n1 = branch_and_bound(&compile_problem(&ds, &spec, None).unwrap(), &SolverLimits::default())
            .unwrap()
            .n;
        let n2 = branch_and_bound(
            &compile_problem(&ds, &spec.scaled(2.0), None).unwrap(),
            &SolverLimits::default(),
        )
        .unwrap()
        .n;
        assert!(n2 >= n1, "seed {seed}: {n1} -> {n2}");
    }
}

#[test]
fn without_balance_rows_optimum_is_sum_of_stratum_minima() {
    let opts = RandomInstanceOptions {
        max_treated: 40,
        max_control: 40,
        max_strata: 5,
        ..RandomInstanceOptions::default()
    };
    let spec = BalanceSpec {
        group_tolerance: None,
        target_tolerance: None,
        min_pairs: None,
    };
    for seed in 0..50 {
        let ds = random_instance(seed, &opts);
        let expected: usize = ds.strata.iter().map(|s| s.n_treated.min(s.n_control)).sum();
        let sol = branch_and_bound(&compile_problem(&ds, &spec, None).unwrap(), &SolverLimits::default()).unwrap();
        assert_eq!(sol.n, expected, "seed {seed}");
    }
}

#[test]
fn repeated_solves_are_identical() {
    let ds = random_instance(7, &RandomInstanceOptions::default());
    let p = compile_problem(&ds, &group_spec(2, 0.05), None).unwrap();
    let a = branch_and_bound(&p, &SolverLimits::default()).unwrap();
    let b = branch_and_bound(&p, &SolverLimits::default()).unwrap();
    assert_eq!(a.treated_ids, b.treated_ids);
    assert_eq!(a.control_ids, b.control_ids);
    assert_eq!(a.nodes, b.nodes);
}
