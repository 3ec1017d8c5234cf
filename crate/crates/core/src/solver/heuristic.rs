//! Rounding heuristic: turns an LP point into a feasible 0/1 selection.
//!
//! Variables are ranked by LP value (descending, ties by unit id). The
//! selection starts from the integral ones, strata are equalized from that
//! ranking, and violated balance rows are then repaired with count-preserving
//! swaps inside a stratum, falling back to dropping pairs. Finally pairs are
//! admitted in ranking order as long as a short swap repair keeps every row
//! satisfied. The empty selection is feasible for homogeneous rows, so the
//! procedure always has a fallback.

use std::time::Instant;

use crate::problem::{Group, RowKind, SelectionProblem};

use super::simplex::LpData;

/// Internal slack margin; verification uses 1e-9.
const ROW_TOL: f64 = 1e-10;
const CANDIDATES: usize = 6;
const REPAIR_STEPS_PER_PAIR: usize = 25;
const MAX_ADD_FAILURES: usize = 40;

struct State<'a> {
    problem: &'a SelectionProblem,
    data: &'a LpData,
    lower: &'a [f64],
    upper: &'a [f64],
    selected: Vec<bool>,
    activity: Vec<f64>,
    rhs: Vec<f64>,
    is_eq: Vec<bool>,
    /// Selected (treated, control) per stratum.
    counts: Vec<(usize, usize)>,
}

impl<'a> State<'a> {
    fn new(
        problem: &'a SelectionProblem,
        data: &'a LpData,
        lower: &'a [f64],
        upper: &'a [f64],
    ) -> Self {
        State {
            problem,
            data,
            lower,
            upper,
            selected: vec![false; problem.n_vars()],
            activity: vec![0.0; problem.rows.len()],
            rhs: problem.rows.iter().map(|r| r.rhs).collect(),
            is_eq: problem.rows.iter().map(|r| r.kind == RowKind::Equal).collect(),
            counts: vec![(0, 0); problem.strata.len()],
        }
    }

    fn removable(&self, j: usize) -> bool {
        self.selected[j] && self.lower[j] < 0.5
    }

    fn addable(&self, j: usize) -> bool {
        !self.selected[j] && self.upper[j] >= 0.5
    }

    fn flip(&mut self, j: usize) {
        let on = !self.selected[j];
        self.selected[j] = on;
        let sign = if on { 1.0 } else { -1.0 };
        let data = self.data;
        for (i, a) in data.column(j) {
            self.activity[i] += sign * a;
        }
        let v = &self.problem.variables[j];
        let c = &mut self.counts[v.stratum];
        let slot = match v.group {
            Group::Treated => &mut c.0,
            Group::Control => &mut c.1,
        };
        if on {
            *slot += 1;
        } else {
            *slot -= 1;
        }
    }

    fn row_violation(&self, i: usize, act: f64) -> f64 {
        let d = act - self.rhs[i];
        let d = if self.is_eq[i] { d.abs() } else { d };
        if d > ROW_TOL {
            d
        } else {
            0.0
        }
    }

    fn violation(&self) -> f64 {
        (0..self.activity.len())
            .map(|i| self.row_violation(i, self.activity[i]))
            .sum()
    }

    /// Total violation after flipping the given variables.
    fn violation_after(&self, flips: &[usize]) -> f64 {
        let mut delta: Vec<(usize, f64)> = Vec::with_capacity(flips.len() * 8);
        for &j in flips {
            let sign = if self.selected[j] { -1.0 } else { 1.0 };
            delta.extend(self.data.column(j).map(|(i, a)| (i, sign * a)));
        }
        let mut touched: Vec<usize> = delta.iter().map(|&(i, _)| i).collect();
        touched.sort_unstable();
        touched.dedup();
        let mut v = self.violation();
        for &i in &touched {
            let change: f64 = delta.iter().filter(|&&(r, _)| r == i).map(|&(_, a)| a).sum();
            v += self.row_violation(i, self.activity[i] + change)
                - self.row_violation(i, self.activity[i]);
        }
        v.max(0.0)
    }

    fn recompute(&mut self) {
        self.activity.iter_mut().for_each(|a| *a = 0.0);
        let data = self.data;
        for j in 0..self.selected.len() {
            if self.selected[j] {
                for (i, a) in data.column(j) {
                    self.activity[i] += a;
                }
            }
        }
    }

    fn n(&self) -> usize {
        self.counts.iter().map(|c| c.0).sum()
    }

    /// Sensitivity of the violated rows to each variable.
    fn scores(&self) -> Vec<f64> {
        let weight: Vec<f64> = (0..self.activity.len())
            .map(|i| {
                if !self.is_eq[i] && self.row_violation(i, self.activity[i]) > 0.0 {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        (0..self.selected.len())
            .map(|j| self.data.column(j).map(|(i, a)| weight[i] * a).sum())
            .collect()
    }

    fn top_k(&self, members: &[usize], keep: impl Fn(usize) -> bool, key: impl Fn(usize) -> f64) -> Vec<usize> {
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(CANDIDATES + 1);
        for &j in members {
            if !keep(j) {
                continue;
            }
            let k = key(j);
            if best.len() < CANDIDATES || k > best[best.len() - 1].0 {
                let pos = best.partition_point(|&(b, _)| b >= k);
                best.insert(pos, (k, j));
                best.truncate(CANDIDATES);
            }
        }
        best.into_iter().map(|(_, j)| j).collect()
    }

    /// Best count-preserving swap; returns flips and resulting violation.
    fn best_swap(&self, scores: &[f64]) -> Option<(Vec<usize>, f64)> {
        let mut best: Option<(Vec<usize>, f64)> = None;
        for s in &self.problem.strata {
            for members in [&s.treated, &s.control] {
                let outs = self.top_k(members, |j| self.removable(j), |j| scores[j]);
                if outs.is_empty() {
                    continue;
                }
                let ins = self.top_k(members, |j| self.addable(j), |j| -scores[j]);
                for &o in &outs {
                    for &i in &ins {
                        let v = self.violation_after(&[o, i]);
                        if best.as_ref().is_none_or(|(_, b)| v < *b) {
                            best = Some((vec![o, i], v));
                        }
                    }
                }
            }
        }
        best
    }

    fn best_pair_removal(&self, scores: &[f64]) -> Option<(Vec<usize>, f64)> {
        let mut best: Option<(Vec<usize>, f64)> = None;
        for s in &self.problem.strata {
            let ts = self.top_k(&s.treated, |j| self.removable(j), |j| scores[j]);
            let cs = self.top_k(&s.control, |j| self.removable(j), |j| scores[j]);
            for &t in &ts {
                for &c in &cs {
                    let v = self.violation_after(&[t, c]);
                    if best.as_ref().is_none_or(|(_, b)| v < *b) {
                        best = Some((vec![t, c], v));
                    }
                }
            }
        }
        best
    }

    /// Swap-only repair; returns true once every row holds.
    fn repair_swaps(&mut self, max_steps: usize, log: &mut Vec<usize>) -> bool {
        for _ in 0..max_steps {
            let v = self.violation();
            if v <= 0.0 {
                return true;
            }
            let scores = self.scores();
            match self.best_swap(&scores) {
                Some((flips, nv)) if nv < v - 1e-12 => {
                    for j in flips {
                        self.flip(j);
                        log.push(j);
                    }
                }
                _ => return false,
            }
        }
        self.violation() <= 0.0
    }

    /// Swaps first, pair removal when no swap helps. Fails only if fixings block it.
    fn repair(&mut self) -> bool {
        let max_steps = 20 * self.selected.len() + 1000;
        for _ in 0..max_steps {
            let v = self.violation();
            if v <= 0.0 {
                return true;
            }
            let scores = self.scores();
            let swap = self.best_swap(&scores);
            let flips = match swap {
                Some((flips, nv)) if nv < v - 1e-12 => flips,
                _ => match self.best_pair_removal(&scores) {
                    Some((flips, _)) => flips,
                    None => return false,
                },
            };
            for j in flips {
                self.flip(j);
            }
        }
        false
    }
}

/// Rounds an LP point to a feasible selection, or `None` when the fixed
/// variables admit no feasible completion found by the repair.
#[allow(clippy::too_many_arguments)]
pub(crate) fn round_selection(
    problem: &SelectionProblem,
    data: &LpData,
    lp_x: &[f64],
    lower: &[f64],
    upper: &[f64],
    target: usize,
    deadline: Option<Instant>,
) -> Option<Vec<bool>> {
    let mut order: Vec<usize> = (0..problem.n_vars()).collect();
    order.sort_by(|&a, &b| {
        lp_x[b]
            .total_cmp(&lp_x[a])
            .then_with(|| problem.variables[a].id.cmp(&problem.variables[b].id))
    });
    let mut rank = vec![0usize; order.len()];
    for (r, &j) in order.iter().enumerate() {
        rank[j] = r;
    }

    let mut st = State::new(problem, data, lower, upper);
    for j in 0..problem.n_vars() {
        if lower[j] >= 0.5 || (upper[j] >= 0.5 && lp_x[j] >= 1.0 - 1e-6) {
            st.flip(j);
        }
    }

    // Equalize each stratum, comparing "add the best-ranked minority unit"
    // with "drop the worst-ranked majority unit" by resulting violation.
    for (s, sv) in problem.strata.iter().enumerate() {
        loop {
            let (t, c) = st.counts[s];
            if t == c {
                break;
            }
            let (minority, majority) = if t > c {
                (&sv.control, &sv.treated)
            } else {
                (&sv.treated, &sv.control)
            };
            let add = minority
                .iter()
                .copied()
                .filter(|&j| st.addable(j))
                .min_by_key(|&j| rank[j]);
            let drop = majority
                .iter()
                .copied()
                .filter(|&j| st.removable(j))
                .max_by_key(|&j| rank[j]);
            let pick = match (add, drop) {
                (Some(a), Some(d)) => {
                    if st.violation_after(&[a]) <= st.violation_after(&[d]) {
                        a
                    } else {
                        d
                    }
                }
                (Some(a), None) => a,
                (None, Some(d)) => d,
                (None, None) => return None,
            };
            st.flip(pick);
        }
    }

    if !st.repair() {
        return None;
    }

    // Grow toward the bound, admitting pairs in ranking order.
    let mut failures = 0;
    let mut tried = vec![false; problem.n_vars()];
    let treated_order: Vec<usize> = order
        .iter()
        .copied()
        .filter(|&j| problem.variables[j].group == Group::Treated)
        .collect();
    let mut cursor = 0;
    while st.n() < target && failures < MAX_ADD_FAILURES && cursor < treated_order.len() {
        if deadline.is_some_and(|d| Instant::now() >= d) {
            break;
        }
        let t = treated_order[cursor];
        cursor += 1;
        if !st.addable(t) || tried[t] {
            continue;
        }
        tried[t] = true;
        let sv = &problem.strata[problem.variables[t].stratum];
        let mut controls: Vec<usize> = sv.control.iter().copied().filter(|&c| st.addable(c)).collect();
        if controls.is_empty() {
            continue;
        }
        controls.sort_by_key(|&c| rank[c]);
        controls.truncate(4 * CANDIDATES);
        let c = controls
            .iter()
            .copied()
            .min_by(|&a, &b| {
                st.violation_after(&[t, a])
                    .total_cmp(&st.violation_after(&[t, b]))
                    .then(rank[a].cmp(&rank[b]))
            })
            .expect("nonempty");
        let mut log = vec![t, c];
        st.flip(t);
        st.flip(c);
        if st.repair_swaps(REPAIR_STEPS_PER_PAIR, &mut log) {
            failures = 0;
        } else {
            for &j in log.iter().rev() {
                st.flip(j);
            }
            failures += 1;
        }
    }

    st.recompute();
    if st.violation() > 0.0 && !st.repair() {
        return None;
    }
    Some(st.selected)
}
