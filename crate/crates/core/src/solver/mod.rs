//! Selection solver: LP relaxation, rounding, and best-first branch-and-bound.

mod heuristic;
pub mod oracle;
pub mod simplex;

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::problem::{Group, SelectionProblem};

pub use oracle::enumerate_oracle;
pub use simplex::{solve_lp, LpData, LpOptions, LpResult, LpStatus};

pub const INTEGRALITY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverLimits {
    pub time_limit: Duration,
    pub gap_abs: f64,
    pub threads: usize,
    pub seed: u64,
}

impl Default for SolverLimits {
    fn default() -> Self {
        SolverLimits {
            time_limit: Duration::from_secs(600),
            gap_abs: 0.0,
            threads: 1,
            seed: 0,
        }
    }
}

impl SolverLimits {
    pub fn from_config(cfg: &crate::config::SolverConfig) -> Self {
        SolverLimits {
            time_limit: Duration::from_secs_f64(cfg.time_limit_s),
            gap_abs: cfg.gap_abs,
            threads: cfg.threads,
            seed: cfg.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    /// Gap closed.
    Optimal,
    /// Search finished with the gap inside `gap_abs`.
    WithinGap,
    /// Time ran out; the incumbent carries an unproven gap.
    TimeLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StratumCount {
    pub label: String,
    pub treated: usize,
    pub control: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchSolution {
    pub treated_ids: Vec<String>,
    pub control_ids: Vec<String>,
    /// 0/1 value of every problem variable.
    #[serde(skip)]
    pub selected: Vec<bool>,
    pub n: usize,
    pub per_stratum: Vec<StratumCount>,
    /// Best proven upper bound on the number of pairs.
    pub bound: usize,
    pub gap: usize,
    pub status: SolveStatus,
    pub nodes: usize,
    pub lp_iterations: usize,
    pub elapsed_s: f64,
    pub seed: u64,
    #[serde(skip)]
    pub log: Vec<String>,
}

impl MatchSolution {
    pub fn from_selection(problem: &SelectionProblem, selected: Vec<bool>) -> MatchSolution {
        let mut per_stratum: Vec<StratumCount> = problem
            .strata
            .iter()
            .map(|s| StratumCount {
                label: s.label.clone(),
                treated: 0,
                control: 0,
            })
            .collect();
        let mut treated_ids = Vec::new();
        let mut control_ids = Vec::new();
        for (j, v) in problem.variables.iter().enumerate() {
            if !selected[j] {
                continue;
            }
            match v.group {
                Group::Treated => {
                    per_stratum[v.stratum].treated += 1;
                    treated_ids.push(v.id.clone());
                }
                Group::Control => {
                    per_stratum[v.stratum].control += 1;
                    control_ids.push(v.id.clone());
                }
            }
        }
        let n = treated_ids.len();
        MatchSolution {
            treated_ids,
            control_ids,
            selected,
            n,
            per_stratum,
            bound: n,
            gap: 0,
            status: SolveStatus::Optimal,
            nodes: 0,
            lp_iterations: 0,
            elapsed_s: 0.0,
            seed: 0,
            log: Vec::new(),
        }
    }
}

/// Greedy rounding of an LP point at the root bounds.
pub fn round_heuristic(lp: &LpResult, problem: &SelectionProblem) -> MatchSolution {
    let data = LpData::from_problem(problem);
    let lower = vec![0.0; data.n];
    let target = integer_bound(lp.objective);
    let selected = heuristic::round_selection(problem, &data, &lp.x, &lower, data.upper(), target, None)
        .unwrap_or_else(|| vec![false; problem.n_vars()]);
    let mut sol = MatchSolution::from_selection(problem, selected);
    sol.bound = target.max(sol.n);
    sol.gap = sol.bound - sol.n;
    sol
}

fn integer_bound(objective: f64) -> usize {
    if objective.is_finite() {
        (objective + INTEGRALITY_TOL).floor().max(0.0) as usize
    } else {
        0
    }
}

struct Node {
    id: usize,
    depth: usize,
    /// LP value of the parent, an upper bound for this subtree.
    bound: f64,
    fixings: Vec<(u32, bool)>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // Max-heap: higher bound first, then earlier creation.
    fn cmp(&self, other: &Self) -> Ordering {
        self.bound
            .total_cmp(&other.bound)
            .then_with(|| other.id.cmp(&self.id))
    }
}

struct Evaluation {
    lp: LpResult,
    rounded: Option<Vec<bool>>,
}

fn evaluate(
    problem: &SelectionProblem,
    data: &LpData,
    node: &Node,
    deadline: Instant,
    incumbent: usize,
    gap_abs: f64,
) -> Result<Evaluation> {
    let mut lower = vec![0.0; data.n];
    let mut upper = data.upper().to_vec();
    for &(j, one) in &node.fixings {
        let j = j as usize;
        if one {
            lower[j] = 1.0;
        } else {
            upper[j] = 0.0;
        }
    }
    let opts = LpOptions {
        max_iterations: None,
        deadline: Some(deadline),
    };
    let lp = simplex::solve_bounded(data, &lower, &upper, &opts)?;
    let mut rounded = None;
    let useful = match lp.status {
        LpStatus::Optimal => (integer_bound(lp.objective) as f64 - incumbent as f64) > gap_abs,
        LpStatus::Infeasible => false,
        LpStatus::IterationLimit | LpStatus::TimeLimit => node.depth == 0,
    };
    if useful {
        let target = if lp.status == LpStatus::Optimal {
            integer_bound(lp.objective)
        } else {
            problem.trivial_bound()
        };
        rounded = heuristic::round_selection(problem, data, &lp.x, &lower, &upper, target, Some(deadline));
    }
    Ok(Evaluation { lp, rounded })
}

fn most_fractional(x: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (j, &v) in x.iter().enumerate() {
        let frac = v - v.floor();
        if frac > INTEGRALITY_TOL && frac < 1.0 - INTEGRALITY_TOL {
            let dist = (frac - 0.5).abs();
            if best.is_none_or(|(_, d)| dist < d) {
                best = Some((j, dist));
            }
        }
    }
    best.map(|(j, _)| j)
}

/// Best-first branch-and-bound over the LP relaxation.
pub fn branch_and_bound(problem: &SelectionProblem, limits: &SolverLimits) -> Result<MatchSolution> {
    if !(limits.time_limit > Duration::ZERO) || !(limits.gap_abs >= 0.0) || limits.threads == 0 {
        return Err(Error::InvalidConfig("solver limits must be positive".into()));
    }
    let start = Instant::now();
    let deadline = start + limits.time_limit;
    let data = LpData::from_problem(problem);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(limits.threads)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;

    let mut log = Vec::new();
    let mut note = |line: String| {
        log::info!("{line}");
        log.push(line);
    };
    note(format!(
        "selection problem: {} variables, {} rows, {} strata",
        problem.n_vars(),
        problem.rows.len(),
        problem.strata.len()
    ));

    let mut incumbent: Option<Vec<bool>> = None;
    let mut incumbent_n = 0usize;
    let mut open = BinaryHeap::new();
    let mut next_id = 0usize;
    let mut nodes = 0usize;
    let mut lp_iterations = 0usize;
    // Highest integer bound among nodes closed only because of gap_abs.
    let mut pruned_bound = 0usize;
    let mut timed_out = false;

    let trivial = problem.trivial_bound();
    open.push(Node {
        id: next_id,
        depth: 0,
        bound: trivial as f64,
        fixings: Vec::new(),
    });
    next_id += 1;

    let count = |sel: &[bool]| {
        sel.iter()
            .zip(&problem.variables)
            .filter(|(s, v)| **s && v.group == Group::Treated)
            .count()
    };

    while !open.is_empty() {
        if Instant::now() >= deadline {
            timed_out = true;
            break;
        }
        let mut batch = Vec::with_capacity(limits.threads);
        while batch.len() < limits.threads {
            let Some(node) = open.pop() else { break };
            let ib = integer_bound(node.bound);
            if incumbent.is_some() && ib as f64 - incumbent_n as f64 <= limits.gap_abs {
                if ib > incumbent_n {
                    pruned_bound = pruned_bound.max(ib);
                }
                continue;
            }
            batch.push(node);
        }
        if batch.is_empty() {
            continue;
        }
        let current = incumbent_n;
        let evals: Vec<Result<Evaluation>> = if batch.len() == 1 {
            vec![evaluate(problem, &data, &batch[0], deadline, current, limits.gap_abs)]
        } else {
            pool.install(|| {
                batch
                    .par_iter()
                    .map(|node| evaluate(problem, &data, node, deadline, current, limits.gap_abs))
                    .collect()
            })
        };

        for (node, eval) in batch.into_iter().zip(evals) {
            let eval = eval?;
            nodes += 1;
            lp_iterations += eval.lp.iterations;
            if let Some(sel) = eval.rounded {
                let n = count(&sel);
                if incumbent.is_none() || n > incumbent_n {
                    note(format!(
                        "node {} depth {}: incumbent {} pairs (lp {:.4})",
                        node.id, node.depth, n, eval.lp.objective
                    ));
                    incumbent_n = n;
                    incumbent = Some(sel);
                }
            }
            match eval.lp.status {
                LpStatus::Infeasible => continue,
                LpStatus::TimeLimit | LpStatus::IterationLimit => {
                    timed_out |= eval.lp.status == LpStatus::TimeLimit;
                    open.push(node);
                    continue;
                }
                LpStatus::Optimal => {}
            }
            let ib = integer_bound(eval.lp.objective);
            if node.depth == 0 {
                note(format!(
                    "root relaxation: objective {:.6}, {} simplex iterations, {:.3}s",
                    eval.lp.objective,
                    eval.lp.iterations,
                    start.elapsed().as_secs_f64()
                ));
            }
            if incumbent.is_some() && ib as f64 - incumbent_n as f64 <= limits.gap_abs {
                if ib > incumbent_n {
                    pruned_bound = pruned_bound.max(ib);
                }
                continue;
            }
            let Some(branch) = most_fractional(&eval.lp.x) else {
                // Integral relaxation: the rounding reproduced it unless numerics got in the way.
                continue;
            };
            for value in [true, false] {
                let mut fixings = node.fixings.clone();
                fixings.push((branch as u32, value));
                open.push(Node {
                    id: next_id,
                    depth: node.depth + 1,
                    bound: eval.lp.objective,
                    fixings,
                });
                next_id += 1;
            }
        }
        if timed_out {
            break;
        }
    }

    let open_bound = open
        .iter()
        .map(|n| integer_bound(n.bound).min(trivial))
        .max()
        .unwrap_or(0);
    let selected = incumbent.unwrap_or_else(|| vec![false; problem.n_vars()]);
    let mut sol = MatchSolution::from_selection(problem, selected);
    sol.bound = sol.n.max(open_bound).max(pruned_bound);
    sol.gap = sol.bound - sol.n;
    sol.status = if timed_out && !open.is_empty() {
        SolveStatus::TimeLimit
    } else if sol.gap == 0 {
        SolveStatus::Optimal
    } else {
        SolveStatus::WithinGap
    };
    sol.nodes = nodes;
    sol.lp_iterations = lp_iterations;
    sol.elapsed_s = start.elapsed().as_secs_f64();
    sol.seed = limits.seed;
    note(format!(
        "finished: status {:?}, n = {}, bound = {}, gap = {}, nodes = {}, {:.3}s",
        sol.status, sol.n, sol.bound, sol.gap, sol.nodes, sol.elapsed_s
    ));
    sol.log = log;
    Ok(sol)
}
