//! Bounded-variable revised primal simplex.
//!
//! Solves `max c'x` subject to `A x (<= | =) b`, `l <= x <= u` with a dense
//! explicit basis inverse. Every row gets a slack (`[0, inf)` for `<=`, `[0, 0]`
//! for `=`); rows whose residual the slack cannot absorb at the starting point
//! get an artificial that phase 1 drives to zero. Pricing is Dantzig's rule,
//! scanned in segments when the column count is large, and switches to Bland's
//! rule once the iteration count passes `5 * (rows + cols)`.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::problem::{RowKind, SelectionProblem};

pub const FEASIBILITY_TOL: f64 = 1e-7;
const OPTIMALITY_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-9;
const REFACTOR_EVERY: usize = 100;
/// Above this many columns pricing scans one segment at a time.
const PARTIAL_PRICING_MIN_COLS: usize = 20_000;

/// Column-major copy of a selection problem's constraint matrix.
#[derive(Debug, Clone)]
pub struct LpData {
    pub m: usize,
    pub n: usize,
    col_start: Vec<usize>,
    row_idx: Vec<usize>,
    vals: Vec<f64>,
    rhs: Vec<f64>,
    is_eq: Vec<bool>,
    cost: Vec<f64>,
    upper: Vec<f64>,
}

impl LpData {
    pub fn from_problem(problem: &SelectionProblem) -> LpData {
        let m = problem.rows.len();
        let n = problem.n_vars();
        let mut counts = vec![0usize; n + 1];
        for row in &problem.rows {
            for &(j, _) in &row.coefficients {
                counts[j + 1] += 1;
            }
        }
        for j in 0..n {
            counts[j + 1] += counts[j];
        }
        let col_start = counts.clone();
        let nnz = col_start[n];
        let mut fill = counts;
        let mut row_idx = vec![0; nnz];
        let mut vals = vec![0.0; nnz];
        for (i, row) in problem.rows.iter().enumerate() {
            for &(j, a) in &row.coefficients {
                let p = fill[j];
                row_idx[p] = i;
                vals[p] = a;
                fill[j] += 1;
            }
        }
        LpData {
            m,
            n,
            col_start,
            row_idx,
            vals,
            rhs: problem.rows.iter().map(|r| r.rhs).collect(),
            is_eq: problem.rows.iter().map(|r| r.kind == RowKind::Equal).collect(),
            cost: (0..n).map(|j| problem.objective(j)).collect(),
            upper: problem.variables.iter().map(|v| v.upper).collect(),
        }
    }

    /// Default upper bounds of the structural variables.
    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub(crate) fn column(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.col_start[j]..self.col_start[j + 1];
        self.row_idx[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    /// Stopped early; the point is feasible only if phase 1 had finished.
    IterationLimit,
    TimeLimit,
}

#[derive(Debug, Clone)]
pub struct LpResult {
    pub status: LpStatus,
    /// Structural variable values.
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// True when `x` satisfies every row (phase 1 completed).
    pub feasible: bool,
    pub basic_structurals: usize,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LpOptions {
    pub max_iterations: Option<usize>,
    pub deadline: Option<Instant>,
}

enum Step {
    Optimal,
    Moved,
    Unbounded,
}

struct Simplex<'a> {
    d: &'a LpData,
    m: usize,
    n_total: usize,
    lb: Vec<f64>,
    ub: Vec<f64>,
    cost: Vec<f64>,
    x: Vec<f64>,
    basis: Vec<usize>,
    /// Basis position of each variable, `usize::MAX` when nonbasic.
    position: Vec<usize>,
    binv: Vec<f64>,
    art_sign: Vec<f64>,
    iterations: usize,
    since_refactor: usize,
    bland_after: usize,
    price_cursor: usize,
    segment: usize,
    y: Vec<f64>,
    alpha: Vec<f64>,
}

impl<'a> Simplex<'a> {
    fn new(d: &'a LpData, lower: &[f64], upper: &[f64]) -> Simplex<'a> {
        let (m, n) = (d.m, d.n);
        let n_total = n + 2 * m;
        let mut lb = vec![0.0; n_total];
        let mut ub = vec![0.0; n_total];
        lb[..n].copy_from_slice(lower);
        ub[..n].copy_from_slice(upper);
        for i in 0..m {
            ub[n + i] = if d.is_eq[i] { 0.0 } else { f64::INFINITY };
        }
        let mut x = vec![0.0; n_total];
        x[..n].copy_from_slice(lower);

        let mut residual = d.rhs.clone();
        for (j, &xj) in x[..n].iter().enumerate() {
            if xj != 0.0 {
                for (i, a) in d.column(j) {
                    residual[i] -= a * xj;
                }
            }
        }
        let mut basis = vec![0; m];
        let mut position = vec![usize::MAX; n_total];
        let mut art_sign = vec![1.0; m];
        let mut binv = vec![0.0; m * m];
        for i in 0..m {
            let r = residual[i];
            let slack_ok = r >= -FEASIBILITY_TOL && r <= ub[n + i] + FEASIBILITY_TOL;
            if slack_ok {
                basis[i] = n + i;
                x[n + i] = r;
                binv[i * m + i] = 1.0;
            } else {
                // Slack parks at 0, artificial carries |r| with the row's sign.
                let sign = if r > 0.0 { 1.0 } else { -1.0 };
                art_sign[i] = sign;
                basis[i] = n + m + i;
                x[n + m + i] = r.abs();
                ub[n + m + i] = f64::INFINITY;
                binv[i * m + i] = sign;
            }
            position[basis[i]] = i;
        }
        let segment = if n_total >= PARTIAL_PRICING_MIN_COLS {
            (n_total / 40).max(2_000)
        } else {
            n_total
        };
        Simplex {
            d,
            m,
            n_total,
            lb,
            ub,
            cost: vec![0.0; n_total],
            x,
            basis,
            position,
            binv,
            art_sign,
            iterations: 0,
            since_refactor: 0,
            bland_after: 5 * (m + n),
            price_cursor: 0,
            segment,
            y: vec![0.0; m],
            alpha: vec![0.0; m],
        }
    }

    fn needs_phase_one(&self) -> bool {
        let base = self.d.n + self.m;
        (0..self.m).any(|i| self.position[base + i] != usize::MAX && self.x[base + i] > 0.0)
    }

    fn infeasibility(&self) -> f64 {
        let base = self.d.n + self.m;
        (0..self.m).map(|i| self.x[base + i].max(0.0)).sum()
    }

    fn for_column(&self, j: usize, mut f: impl FnMut(usize, f64)) {
        let n = self.d.n;
        if j < n {
            for (i, a) in self.d.column(j) {
                f(i, a);
            }
        } else if j < n + self.m {
            f(j - n, 1.0);
        } else {
            let i = j - n - self.m;
            f(i, self.art_sign[i]);
        }
    }

    fn reduced_cost(&self, j: usize) -> f64 {
        let n = self.d.n;
        let mut dj = self.cost[j];
        if j < n {
            let r = self.d.col_start[j]..self.d.col_start[j + 1];
            for (&i, &a) in self.d.row_idx[r.clone()].iter().zip(&self.d.vals[r]) {
                dj -= self.y[i] * a;
            }
        } else if j < n + self.m {
            dj -= self.y[j - n];
        } else {
            let i = j - n - self.m;
            dj -= self.y[i] * self.art_sign[i];
        }
        dj
    }

    /// Direction +1 (increase from lower bound) or -1 (decrease from upper).
    fn eligible(&self, j: usize, dj: f64) -> Option<f64> {
        if self.position[j] != usize::MAX || self.ub[j] - self.lb[j] <= 0.0 {
            return None;
        }
        if dj > OPTIMALITY_TOL && self.x[j] < self.ub[j] {
            Some(1.0)
        } else if dj < -OPTIMALITY_TOL && self.x[j] > self.lb[j] {
            Some(-1.0)
        } else {
            None
        }
    }

    fn compute_duals(&mut self) {
        let m = self.m;
        self.y.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..m {
            let cb = self.cost[self.basis[i]];
            if cb != 0.0 {
                let row = &self.binv[i * m..(i + 1) * m];
                for (yk, b) in self.y.iter_mut().zip(row) {
                    *yk += cb * b;
                }
            }
        }
    }

    fn price(&mut self, bland: bool) -> Option<(usize, f64)> {
        if bland {
            return (0..self.n_total).find_map(|j| {
                let dj = self.reduced_cost(j);
                self.eligible(j, dj).map(|dir| (j, dir))
            });
        }
        let total = self.n_total;
        let mut scanned = 0;
        let mut start = self.price_cursor;
        while scanned < total {
            let len = self.segment.min(total - scanned);
            let mut best: Option<(usize, f64, f64)> = None;
            for off in 0..len {
                let j = (start + off) % total;
                let dj = self.reduced_cost(j);
                if let Some(dir) = self.eligible(j, dj) {
                    if best.is_none_or(|(_, _, b)| dj.abs() > b) {
                        best = Some((j, dir, dj.abs()));
                    }
                }
            }
            scanned += len;
            start = (start + len) % total;
            if let Some((j, dir, _)) = best {
                if self.segment < total {
                    self.price_cursor = start;
                }
                return Some((j, dir));
            }
        }
        None
    }

    fn iterate(&mut self) -> Result<Step> {
        let bland = self.iterations >= self.bland_after;
        self.compute_duals();
        let Some((q, dir)) = self.price(bland) else {
            return Ok(Step::Optimal);
        };
        let m = self.m;
        // alpha = B^-1 a_q
        self.alpha.iter_mut().for_each(|v| *v = 0.0);
        let mut col = Vec::with_capacity(8);
        self.for_column(q, |i, a| col.push((i, a)));
        for i in 0..m {
            let row = &self.binv[i * m..(i + 1) * m];
            self.alpha[i] = col.iter().map(|&(k, a)| row[k] * a).sum();
        }

        let mut theta = self.ub[q] - self.lb[q];
        let mut leave: Option<usize> = None;
        for i in 0..m {
            let rate = dir * self.alpha[i];
            let b = self.basis[i];
            let t = if rate > PIVOT_TOL {
                (self.x[b] - self.lb[b]) / rate
            } else if rate < -PIVOT_TOL && self.ub[b].is_finite() {
                (self.ub[b] - self.x[b]) / -rate
            } else {
                continue;
            };
            let t = t.max(0.0);
            let better = match leave {
                _ if t < theta - 1e-12 => true,
                None => false,
                Some(l) if t <= theta + 1e-12 => {
                    if bland {
                        b < self.basis[l]
                    } else {
                        rate.abs() > (dir * self.alpha[l]).abs()
                    }
                }
                _ => false,
            };
            if better {
                theta = t.min(theta);
                leave = Some(i);
            }
        }
        if !theta.is_finite() {
            return Ok(Step::Unbounded);
        }
        self.iterations += 1;

        let delta = dir * theta;
        for i in 0..m {
            if self.alpha[i] != 0.0 {
                self.x[self.basis[i]] -= delta * self.alpha[i];
            }
        }
        self.x[q] += delta;
        match leave {
            None => {
                // Bound flip: snap exactly onto the opposite bound.
                self.x[q] = if dir > 0.0 { self.ub[q] } else { self.lb[q] };
            }
            Some(r) => {
                let out = self.basis[r];
                let rate = dir * self.alpha[r];
                self.x[out] = if rate > 0.0 { self.lb[out] } else { self.ub[out] };
                self.position[out] = usize::MAX;
                self.basis[r] = q;
                self.position[q] = r;
                let piv = self.alpha[r];
                let (before, rest) = self.binv.split_at_mut(r * m);
                let (prow, after) = rest.split_at_mut(m);
                prow.iter_mut().for_each(|v| *v /= piv);
                for (i, row) in before.chunks_mut(m).chain(after.chunks_mut(m)).enumerate() {
                    let i = if i < r { i } else { i + 1 };
                    let f = self.alpha[i];
                    if f != 0.0 {
                        for (v, p) in row.iter_mut().zip(prow.iter()) {
                            *v -= f * p;
                        }
                    }
                }
                self.since_refactor += 1;
                if self.since_refactor >= REFACTOR_EVERY {
                    self.refactor()?;
                }
            }
        }
        Ok(Step::Moved)
    }

    /// Rebuilds B^-1 from scratch and recomputes the basic values.
    fn refactor(&mut self) -> Result<()> {
        let m = self.m;
        let mut b = vec![0.0; m * m];
        for (k, &j) in self.basis.iter().enumerate() {
            let mut entries = Vec::new();
            self.for_column(j, |i, a| entries.push((i, a)));
            for (i, a) in entries {
                b[i * m + k] = a;
            }
        }
        self.binv = invert(&b, m).ok_or(Error::SingularBasis)?;
        let mut residual = self.d.rhs.clone();
        for j in 0..self.n_total {
            if self.position[j] == usize::MAX && self.x[j] != 0.0 {
                let xj = self.x[j];
                let mut entries = Vec::new();
                self.for_column(j, |i, a| entries.push((i, a)));
                for (i, a) in entries {
                    residual[i] -= a * xj;
                }
            }
        }
        for i in 0..m {
            let row = &self.binv[i * m..(i + 1) * m];
            self.x[self.basis[i]] = row.iter().zip(&residual).map(|(a, r)| a * r).sum();
        }
        self.since_refactor = 0;
        Ok(())
    }

    fn run(&mut self, opts: &LpOptions, limit: usize) -> Result<Option<LpStatus>> {
        loop {
            if self.iterations >= limit {
                return Ok(Some(LpStatus::IterationLimit));
            }
            if self.iterations.is_multiple_of(64) {
                if let Some(deadline) = opts.deadline {
                    if Instant::now() >= deadline {
                        return Ok(Some(LpStatus::TimeLimit));
                    }
                }
            }
            match self.iterate()? {
                Step::Moved => {}
                Step::Unbounded => return Err(Error::SingularBasis),
                Step::Optimal => {
                    if self.since_refactor == 0 {
                        return Ok(None);
                    }
                    self.refactor()?;
                    self.compute_duals();
                    if self.price(self.iterations >= self.bland_after).is_none() {
                        return Ok(None);
                    }
                }
            }
        }
    }

    fn result(&self, status: LpStatus, feasible: bool) -> LpResult {
        let n = self.d.n;
        let x: Vec<f64> = (0..n)
            .map(|j| self.x[j].clamp(self.lb[j], self.ub[j]))
            .collect();
        let objective = x.iter().zip(&self.d.cost).map(|(a, c)| a * c).sum();
        LpResult {
            status,
            x,
            objective,
            iterations: self.iterations,
            feasible,
            basic_structurals: self.basis.iter().filter(|&&j| j < n).count(),
        }
    }
}

/// Gauss-Jordan inverse with partial pivoting.
fn invert(a: &[f64], m: usize) -> Option<Vec<f64>> {
    let mut a = a.to_vec();
    let mut inv = vec![0.0; m * m];
    for i in 0..m {
        inv[i * m + i] = 1.0;
    }
    for c in 0..m {
        let p = (c..m).max_by(|&i, &k| a[i * m + c].abs().total_cmp(&a[k * m + c].abs()))?;
        if a[p * m + c].abs() < 1e-13 {
            return None;
        }
        if p != c {
            for k in 0..m {
                a.swap(p * m + k, c * m + k);
                inv.swap(p * m + k, c * m + k);
            }
        }
        let piv = a[c * m + c];
        for k in 0..m {
            a[c * m + k] /= piv;
            inv[c * m + k] /= piv;
        }
        for i in 0..m {
            if i != c {
                let f = a[i * m + c];
                if f != 0.0 {
                    for k in 0..m {
                        a[i * m + k] -= f * a[c * m + k];
                        inv[i * m + k] -= f * inv[c * m + k];
                    }
                }
            }
        }
    }
    Some(inv)
}

/// Solves the relaxation with the given structural bounds.
pub fn solve_bounded(data: &LpData, lower: &[f64], upper: &[f64], opts: &LpOptions) -> Result<LpResult> {
    assert_eq!(lower.len(), data.n);
    assert_eq!(upper.len(), data.n);
    if lower.iter().zip(upper).any(|(l, u)| l > u) {
        return Ok(LpResult {
            status: LpStatus::Infeasible,
            x: lower.to_vec(),
            objective: f64::NEG_INFINITY,
            iterations: 0,
            feasible: false,
            basic_structurals: 0,
        });
    }
    let mut s = Simplex::new(data, lower, upper);
    let limit = opts
        .max_iterations
        .unwrap_or(50 * (data.m + data.n) + 10_000);

    if s.needs_phase_one() {
        let base = data.n + data.m;
        for i in 0..data.m {
            s.cost[base + i] = -1.0;
        }
        if let Some(status) = s.run(opts, limit)? {
            return Ok(s.result(status, false));
        }
        if s.infeasibility() > FEASIBILITY_TOL {
            let mut r = s.result(LpStatus::Infeasible, false);
            r.objective = f64::NEG_INFINITY;
            return Ok(r);
        }
        for i in 0..data.m {
            s.cost[base + i] = 0.0;
            s.ub[base + i] = 0.0;
            if s.position[base + i] == usize::MAX {
                s.x[base + i] = 0.0;
            }
        }
    }
    s.cost[..data.n].copy_from_slice(&data.cost);
    let status = s.run(opts, limit)?.unwrap_or(LpStatus::Optimal);
    Ok(s.result(status, true))
}

/// Solves the relaxation of a selection problem at its default bounds.
pub fn solve_lp(problem: &SelectionProblem) -> Result<LpResult> {
    let data = LpData::from_problem(problem);
    let lower = vec![0.0; data.n];
    solve_bounded(&data, &lower, data.upper(), &LpOptions::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{Group, Row, StratumVars, Variable};

    fn var(id: usize, group: Group) -> Variable {
        Variable {
            unit: id,
            id: format!("u{id}"),
            group,
            stratum: 0,
            upper: 1.0,
        }
    }

    #[test]
    fn inverse_roundtrip() {
        let a = [4.0, 1.0, 2.0, 0.5, 3.0, 1.0, 2.0, 0.0, 5.0];
        let inv = invert(&a, 3).unwrap();
        for i in 0..3 {
            for k in 0..3 {
                let v: f64 = (0..3).map(|j| a[i * 3 + j] * inv[j * 3 + k]).sum();
                assert!((v - if i == k { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn small_lp_with_nonzero_rhs() {
        // max x0 (treated) s.t. x0 - x1 = 0, x0 + x1 <= 1.2; optimum x0 = 0.6.
        let problem = SelectionProblem {
            variables: vec![var(0, Group::Treated), var(1, Group::Control)],
            rows: vec![
                Row {
                    name: "eq".into(),
                    kind: RowKind::Equal,
                    coefficients: vec![(0, 1.0), (1, -1.0)],
                    rhs: 0.0,
                },
                Row {
                    name: "cap".into(),
                    kind: RowKind::LessEqual,
                    coefficients: vec![(0, 1.0), (1, 1.0)],
                    rhs: 1.2,
                },
            ],
            strata: vec![StratumVars {
                label: "all".into(),
                treated: vec![0],
                control: vec![1],
            }],
        };
        let lp = solve_lp(&problem).unwrap();
        assert_eq!(lp.status, LpStatus::Optimal);
        assert!((lp.objective - 0.6).abs() < 1e-9);
    }

    #[test]
    fn phase_one_detects_infeasible_fixing() {
        let problem = SelectionProblem {
            variables: vec![var(0, Group::Treated), var(1, Group::Control)],
            rows: vec![Row {
                name: "eq".into(),
                kind: RowKind::Equal,
                coefficients: vec![(0, 1.0), (1, -1.0)],
                rhs: 0.0,
            }],
            strata: vec![],
        };
        let data = LpData::from_problem(&problem);
        // Force treated in, control out.
        let r = solve_bounded(&data, &[1.0, 0.0], &[1.0, 0.0], &LpOptions::default()).unwrap();
        assert_eq!(r.status, LpStatus::Infeasible);
        let r = solve_bounded(&data, &[1.0, 0.0], &[1.0, 1.0], &LpOptions::default()).unwrap();
        assert_eq!(r.status, LpStatus::Optimal);
        assert!((r.x[1] - 1.0).abs() < 1e-9);
    }
}
