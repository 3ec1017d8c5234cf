use cardmatch_core::pairing::{distance, pair_within_strata, solve_assignment, Metric};
use cardmatch_core::problem::{compile_problem, BalanceSpec};
use cardmatch_core::solver::{branch_and_bound, SolverLimits};
use cardmatch_core::synth::{random_instance, RandomInstanceOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Every permutation of `0..n` in lexicographic order.
fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut p: Vec<usize> = (0..n).collect();
    loop {
        out.push(p.clone());
        let Some(i) = (1..n).rev().find(|&i| p[i - 1] < p[i]) else {
            return out;
        };
        let j = (i..n).rev().find(|&j| p[j] > p[i - 1]).unwrap();
        p.swap(i - 1, j);
        p[i..].reverse();
    }
}

fn random_points(rng: &mut ChaCha8Rng, n: usize, k: usize, discrete: bool) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            (0..k)
                .map(|_| {
                    if discrete {
                        rng.random_range(0..3) as f64
                    } else {
                        rng.random::<f64>() * 4.0 - 2.0
                    }
                })
                .collect()
        })
        .collect()
}

#[test]
fn assignment_total_equals_permutation_minimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..100 {
        let n = rng.random_range(1..=7);
        let k = rng.random_range(1..=3);
        let metric = if case % 2 == 0 { Metric::L1 } else { Metric::L2 };
        let t = random_points(&mut rng, n, k, false);
        let c = random_points(&mut rng, n, k, false);
        let cost = |i: usize, j: usize| distance(&t[i], &c[j], metric);
        let brute = permutations(n)
            .iter()
            .map(|p| p.iter().enumerate().map(|(i, &j)| cost(i, j)).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        let a = solve_assignment(n, cost);
        assert!((a.total - brute).abs() <= 1e-9, "case {case}: {} vs {brute}", a.total);
    }
}

#[test]
fn ties_resolve_to_lexicographically_smallest_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for case in 0..100 {
        let n = rng.random_range(2..=7);
        let t = random_points(&mut rng, n, 2, true);
        let c = random_points(&mut rng, n, 2, true);
        let cost = |i: usize, j: usize| distance(&t[i], &c[j], Metric::L1);
        let perms = permutations(n);
        let totals: Vec<f64> = perms
            .iter()
            .map(|p| p.iter().enumerate().map(|(i, &j)| cost(i, j)).sum())
            .collect();
        let best = totals.iter().copied().fold(f64::INFINITY, f64::min);
        // Permutations are enumerated in lexicographic order, so the first optimum is the smallest.
        let first = totals.iter().position(|&v| (v - best).abs() <= 1e-9).unwrap();
        let a = solve_assignment(n, cost);
        assert_eq!(a.col_of_row, perms[first], "case {case}");
    }
}

#[test]
fn no_pairwise_exchange_improves_the_assignment() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..30 {
        let n = rng.random_range(5..=40);
        let t = random_points(&mut rng, n, 3, false);
        let c = random_points(&mut rng, n, 3, false);
        let cost = |i: usize, j: usize| distance(&t[i], &c[j], Metric::L1);
        let a = solve_assignment(n, cost);
        let m = &a.col_of_row;
        for x in 0..n {
            for y in x + 1..n {
                let now = cost(x, m[x]) + cost(y, m[y]);
                let swapped = cost(x, m[y]) + cost(y, m[x]);
                assert!(swapped >= now - 1e-9);
            }
        }
    }
}

#[test]
fn pairs_stay_within_strata_and_cover_the_selection() {
    for seed in 0..20 {
        let ds = random_instance(seed, &RandomInstanceOptions::default());
        let p = compile_problem(&ds, &BalanceSpec::uniform(2, 0.3), None).unwrap();
        let sol = branch_and_bound(&p, &SolverLimits::default()).unwrap();
        let pairs = pair_within_strata(&sol, &ds, Metric::L1).unwrap();
        assert_eq!(pairs.pairs.len(), sol.n);
        let mut seen_t: Vec<&str> = pairs.pairs.iter().map(|q| q.treated_id.as_str()).collect();
        let mut seen_c: Vec<&str> = pairs.pairs.iter().map(|q| q.control_id.as_str()).collect();
        seen_t.sort();
        seen_c.sort();
        let mut want_t: Vec<&str> = sol.treated_ids.iter().map(String::as_str).collect();
        let mut want_c: Vec<&str> = sol.control_ids.iter().map(String::as_str).collect();
        want_t.sort();
        want_c.sort();
        assert_eq!(seen_t, want_t);
        assert_eq!(seen_c, want_c);
        for q in &pairs.pairs {
            let st = |id: &str| ds.stratum_of[ds.index_of(id).unwrap()];
            assert_eq!(st(&q.treated_id), st(&q.control_id));
        }
        let total: f64 = pairs.pairs.iter().map(|q| q.distance).sum();
        assert!((total - pairs.total_distance).abs() < 1e-9);
    }
}
