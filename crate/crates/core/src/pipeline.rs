//! compile -> solve -> verify -> pair -> report, on an in-memory dataset.

use std::time::Instant;

use crate::config::StudySpec;
use crate::data::Dataset;
use crate::diagnostics::{balance_report, BalanceReport};
use crate::error::{Error, Result};
use crate::pairing::{pair_within_strata, PairSet};
use crate::problem::{
    compile_problem, target_from_spec, verify_solution, BalanceSpec, FeasibilityReport, SelectionProblem,
    TargetProfile,
};
use crate::solver::{branch_and_bound, MatchSolution, SolverLimits};

#[derive(Debug, Clone)]
pub struct MatchRun {
    pub balance_spec: BalanceSpec,
    pub target: Option<TargetProfile>,
    pub problem: SelectionProblem,
    pub solution: MatchSolution,
    pub feasibility: FeasibilityReport,
    pub pairs: PairSet,
    pub balance: BalanceReport,
    pub solve_s: f64,
    pub pair_s: f64,
}

pub fn run_match(dataset: &Dataset, study: &StudySpec) -> Result<MatchRun> {
    let target = target_from_spec(study, dataset)?;
    let balance_spec = BalanceSpec::from_study(study, dataset, target.is_some())?;
    let problem = compile_problem(dataset, &balance_spec, target.as_ref())?;
    let limits = SolverLimits::from_config(&study.solver);
    let t0 = Instant::now();
    let solution = branch_and_bound(&problem, &limits)?;
    let solve_s = t0.elapsed().as_secs_f64();
    let feasibility = verify_solution(&problem, &solution);
    if !feasibility.pass {
        let rows: Vec<&str> = feasibility.violations().map(|r| r.name.as_str()).collect();
        return Err(Error::VerificationFailed(
            feasibility.issues.iter().map(String::as_str).chain(rows).collect::<Vec<_>>().join("; "),
        ));
    }
    let t1 = Instant::now();
    let pairs = pair_within_strata(&solution, dataset, study.pairing.metric)?;
    let pair_s = t1.elapsed().as_secs_f64();
    let balance = balance_report(
        dataset,
        &solution.treated_ids,
        &solution.control_ids,
        Some(&balance_spec),
        target.as_ref(),
    )?;
    Ok(MatchRun {
        balance_spec,
        target,
        problem,
        solution,
        feasibility,
        pairs,
        balance,
        solve_s,
        pair_s,
    })
}
