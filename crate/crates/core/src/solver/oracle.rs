//! Exhaustive enumeration of selections, used to check the solver on small problems.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::problem::{Group, RowKind, SelectionProblem, VERIFY_TOLERANCE};

pub const ORACLE_MAX_VARS: usize = 26;

/// Exact optimum of the selection problem by brute force over all subsets
/// with equal per-stratum counts. Returns the optimal number of pairs.
pub fn enumerate_oracle(problem: &SelectionProblem) -> Result<usize> {
    let n_vars = problem.n_vars();
    if n_vars > ORACLE_MAX_VARS {
        return Err(Error::TooLarge(n_vars));
    }
    let pick = |g: Group| -> Vec<usize> {
        (0..n_vars)
            .filter(|&j| problem.variables[j].group == g && problem.variables[j].upper >= 0.5)
            .collect()
    };
    let treated = pick(Group::Treated);
    let control = pick(Group::Control);
    let m = problem.rows.len();

    // Dense coefficient lookup per (variable, row).
    let mut coef = vec![0.0; n_vars * m];
    for (i, row) in problem.rows.iter().enumerate() {
        for &(j, a) in &row.coefficients {
            coef[j * m + i] += a;
        }
    }

    let subset_tables = |vars: &[usize]| {
        let size = 1usize << vars.len();
        let mut activity = vec![0.0; size * m];
        let mut signature: Vec<Vec<u8>> = vec![vec![0; problem.strata.len()]; size];
        for mask in 1..size {
            let low = mask.trailing_zeros() as usize;
            let prev = mask & (mask - 1);
            let j = vars[low];
            for i in 0..m {
                activity[mask * m + i] = activity[prev * m + i] + coef[j * m + i];
            }
            let mut sig = signature[prev].clone();
            sig[problem.variables[j].stratum] += 1;
            signature[mask] = sig;
        }
        (activity, signature)
    };
    let (t_act, t_sig) = subset_tables(&treated);
    let (c_act, c_sig) = subset_tables(&control);

    let mut by_signature: HashMap<&[u8], Vec<usize>> = HashMap::new();
    for (mask, sig) in c_sig.iter().enumerate() {
        by_signature.entry(sig.as_slice()).or_default().push(mask);
    }

    let mut t_masks: Vec<usize> = (0..t_sig.len()).collect();
    t_masks.sort_by_key(|&mask| std::cmp::Reverse(mask.count_ones()));

    let feasible = |tm: usize, cm: usize| {
        problem.rows.iter().enumerate().all(|(i, row)| {
            let act = t_act[tm * m + i] + c_act[cm * m + i];
            match row.kind {
                RowKind::LessEqual => act - row.rhs <= VERIFY_TOLERANCE,
                RowKind::Equal => (act - row.rhs).abs() <= VERIFY_TOLERANCE,
            }
        })
    };

    for &tm in &t_masks {
        let Some(cands) = by_signature.get(t_sig[tm].as_slice()) else {
            continue;
        };
        if cands.iter().any(|&cm| feasible(tm, cm)) {
            // Masks are visited by decreasing size, so the first hit is optimal.
            return Ok(tm.count_ones() as usize);
        }
    }
    // Only reachable when a nonzero right-hand side excludes the empty selection.
    Err(Error::Infeasible)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Dataset, UnitRecord};
    use crate::problem::{compile_problem, BalanceSpec};

    #[test]
    fn unconstrained_instance_matches_closed_form() {
        let mut records = Vec::new();
        let sizes = [("a", 2, 4), ("b", 3, 1)];
        let mut k = 0;
        for (key, t, c) in sizes {
            for i in 0..t + c {
                k += 1;
                records.push(UnitRecord {
                    id: format!("u{k}"),
                    exposed: i < t,
                    raw: vec![k as f64],
                    exact_keys: vec![key.to_string()],
                    outcome: None,
                });
            }
        }
        let ds = Dataset::from_records(records, vec!["x".into()], vec!["g".into()]).unwrap();
        let spec = BalanceSpec {
            group_tolerance: None,
            target_tolerance: None,
            min_pairs: None,
        };
        let p = compile_problem(&ds, &spec, None).unwrap();
        assert_eq!(enumerate_oracle(&p).unwrap(), 3);
    }

    #[test]
    fn too_large_rejected() {
        let records: Vec<UnitRecord> = (0..27)
            .map(|i| UnitRecord {
                id: format!("u{i}"),
                exposed: i % 2 == 0,
                raw: vec![i as f64],
                exact_keys: vec![],
                outcome: None,
            })
            .collect();
        let ds = Dataset::from_records(records, vec!["x".into()], vec![]).unwrap();
        let p = compile_problem(&ds, &BalanceSpec::uniform(1, 0.1), None).unwrap();
        assert!(matches!(enumerate_oracle(&p), Err(Error::TooLarge(27))));
    }
}
