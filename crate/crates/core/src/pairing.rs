//! Pairing of selected units within exact-match strata.
//!
//! Each stratum is solved as a square assignment problem with the shortest
//! augmenting path method (Hungarian algorithm with potentials). Among all
//! minimum-cost assignments the lexicographically smallest one, with units
//! ordered by id, is returned: after the assignment is found, each exposed
//! unit in turn is moved to the smallest unexposed partner reachable through
//! an alternating cycle of zero-reduced-cost edges.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::solver::MatchSolution;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    /// Sum of absolute standardized differences.
    #[default]
    L1,
    /// Euclidean distance on standardized covariates.
    L2,
}

impl std::str::FromStr for Metric {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "l1" | "standardized_l1" => Ok(Metric::L1),
            "l2" | "standardized_l2" => Ok(Metric::L2),
            other => Err(format!("unknown metric '{other}' (expected l1 or l2)")),
        }
    }
}

pub fn distance(a: &[f64], b: &[f64], metric: Metric) -> f64 {
    match metric {
        Metric::L1 => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
        Metric::L2 => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
    }
}

pub fn distance_matrix(treated: &[&[f64]], controls: &[&[f64]], metric: Metric) -> Vec<Vec<f64>> {
    treated
        .iter()
        .map(|t| controls.iter().map(|c| distance(t, c, metric)).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// Column assigned to each row.
    pub col_of_row: Vec<usize>,
    pub total: f64,
}

/// Minimum-cost perfect matching on an `n x n` cost function, lexicographically
/// smallest `(row, column)` list among the optima.
pub fn solve_assignment(n: usize, cost: impl Fn(usize, usize) -> f64) -> Assignment {
    if n == 0 {
        return Assignment {
            col_of_row: Vec::new(),
            total: 0.0,
        };
    }
    // Row-major dense costs; each augmentation scans one row.
    let mut matrix = vec![0.0f64; n * n];
    for i in 0..n {
        for (j, m) in matrix[i * n..(i + 1) * n].iter_mut().enumerate() {
            *m = cost(i, j);
        }
    }
    let (mut col_of_row, u, v) = hungarian(n, &matrix);
    lexicographic_refine(n, &matrix, &u, &v, &mut col_of_row);
    let total = col_of_row.iter().enumerate().map(|(i, &j)| matrix[i * n + j]).sum();
    Assignment { col_of_row, total }
}

/// Shortest augmenting paths with potentials. Returns the assignment and the
/// row and column potentials, for which every reduced cost is nonnegative.
fn hungarian(n: usize, matrix: &[f64]) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    // 1-based potentials; index 0 is the virtual source column.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0f64; n + 1];
    let mut free: Vec<usize> = Vec::with_capacity(n);
    let mut visited: Vec<usize> = Vec::with_capacity(n + 1);
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0usize;
        minv.iter_mut().for_each(|m| *m = f64::INFINITY);
        // Unvisited columns in ascending order, so ties pick the lowest index.
        free.clear();
        free.extend(1..=n);
        visited.clear();
        loop {
            visited.push(j0);
            let i0 = owner[j0];
            let row = &matrix[(i0 - 1) * n..i0 * n];
            let ui = u[i0];
            let mut delta = f64::INFINITY;
            let mut pos = 0usize;
            for (k, &j) in free.iter().enumerate() {
                let cur = row[j - 1] - ui - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    pos = k;
                }
            }
            let j1 = free[pos];
            for &j in &visited {
                u[owner[j]] += delta;
                v[j] -= delta;
            }
            for &j in &free {
                minv[j] -= delta;
            }
            free.remove(pos);
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of_row = vec![0usize; n];
    for j in 1..=n {
        col_of_row[owner[j] - 1] = j - 1;
    }
    u.remove(0);
    v.remove(0);
    (col_of_row, u, v)
}

/// Moves each row, in order, to its smallest column that still admits an
/// optimal completion, using only edges with zero reduced cost.
fn lexicographic_refine(
    n: usize,
    matrix: &[f64],
    u: &[f64],
    v: &[f64],
    col_of_row: &mut [usize],
) {
    let mut scale = 1.0f64;
    for c in matrix {
        scale = scale.max(c.abs());
    }
    let tol = 1e-9 * scale;
    let mut tight_rows: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut tight_cols: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in 0..n {
            if matrix[i * n + j] - u[i] - v[j] <= tol {
                tight_cols[i].push(j);
                tight_rows[j].push(i);
            }
        }
    }
    if tight_cols.iter().all(|c| c.len() == 1) {
        return;
    }

    let mut row_of_col = vec![0usize; n];
    for (i, &j) in col_of_row.iter().enumerate() {
        row_of_col[j] = i;
    }
    let mut fixed = vec![false; n];
    let mut reached = vec![false; n];
    let mut good = vec![false; n];
    let mut next_col = vec![0usize; n];
    let mut queue = Vec::with_capacity(n);
    for i in 0..n {
        let home = col_of_row[i];
        if tight_cols[i].first().is_some_and(|&j| j < home) {
            reached.iter_mut().for_each(|r| *r = false);
            good.iter_mut().for_each(|g| *g = false);
            queue.clear();
            good[home] = true;
            queue.push(home);
            let mut head = 0;
            while head < queue.len() {
                let c = queue[head];
                head += 1;
                for &r in &tight_rows[c] {
                    if fixed[r] || r == i || reached[r] {
                        continue;
                    }
                    reached[r] = true;
                    next_col[r] = c;
                    let freed = col_of_row[r];
                    if !good[freed] {
                        good[freed] = true;
                        queue.push(freed);
                    }
                }
            }
            let target = tight_cols[i]
                .iter()
                .copied()
                .take_while(|&j| j < home)
                .find(|&j| reached[row_of_col[j]]);
            if let Some(j) = target {
                // Walk the alternating chain from the column's owner back to `home`.
                let mut moves = Vec::new();
                let mut r = row_of_col[j];
                loop {
                    let c = next_col[r];
                    moves.push((r, c));
                    if c == home {
                        break;
                    }
                    r = row_of_col[c];
                }
                for (r, c) in moves {
                    col_of_row[r] = c;
                    row_of_col[c] = r;
                }
                col_of_row[i] = j;
                row_of_col[j] = i;
            }
        }
        fixed[i] = true;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Pair {
    pub treated_id: String,
    pub control_id: String,
    pub stratum: String,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StratumPairs {
    pub label: String,
    pub pairs: usize,
    pub total_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairSet {
    pub pairs: Vec<Pair>,
    pub total_distance: f64,
    pub per_stratum: Vec<StratumPairs>,
    pub metric: Metric,
}

impl PairSet {
    pub fn write_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv_to(file)?;
        Ok(())
    }

    pub fn write_csv_to<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["pair_id", "treated_id", "control_id", "stratum", "distance"])?;
        for (k, p) in self.pairs.iter().enumerate() {
            w.write_record([
                (k + 1).to_string(),
                p.treated_id.clone(),
                p.control_id.clone(),
                p.stratum.clone(),
                format!("{:.9}", p.distance),
            ])?;
        }
        w.flush().map_err(|e| Error::io("pairs.csv", e))?;
        Ok(())
    }

    /// Reads `(treated_id, control_id)` pairs back from a `pairs.csv` file.
    pub fn read_id_pairs(path: impl AsRef<std::path::Path>) -> Result<Vec<(String, String)>> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::Reader::from_reader(file);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingColumn(name.to_string()))
        };
        let (t, c) = (col("treated_id")?, col("control_id")?);
        let mut out = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            out.push((rec[t].to_string(), rec[c].to_string()));
        }
        Ok(out)
    }
}

/// Pairs the selected units of every stratum at minimum total distance.
pub fn pair_within_strata(
    solution: &MatchSolution,
    dataset: &Dataset,
    metric: Metric,
) -> Result<PairSet> {
    let index: HashMap<&str, usize> = dataset
        .units
        .iter()
        .enumerate()
        .map(|(i, u)| (u.id.as_str(), i))
        .collect();
    let mut per: Vec<(Vec<usize>, Vec<usize>)> = vec![(Vec::new(), Vec::new()); dataset.strata.len()];
    for (ids, treated) in [(&solution.treated_ids, true), (&solution.control_ids, false)] {
        for id in ids {
            let &i = index
                .get(id.as_str())
                .ok_or_else(|| Error::UnknownId(id.clone()))?;
            let slot = &mut per[dataset.stratum_of[i]];
            if treated {
                slot.0.push(i);
            } else {
                slot.1.push(i);
            }
        }
    }
    for (s, (t, c)) in per.iter_mut().enumerate() {
        if t.len() != c.len() {
            return Err(Error::UnbalancedStratum(dataset.strata[s].label()));
        }
        t.sort_by(|&a, &b| dataset.units[a].id.cmp(&dataset.units[b].id));
        c.sort_by(|&a, &b| dataset.units[a].id.cmp(&dataset.units[b].id));
    }

    let solved: Vec<(Vec<Pair>, f64)> = per
        .par_iter()
        .enumerate()
        .map(|(s, (t, c))| {
            let label = dataset.strata[s].label();
            let k = dataset.n_balance();
            // Contiguous copies speed up filling the dense cost matrix.
            let flat = |idx: &[usize]| -> Vec<f64> {
                idx.iter()
                    .flat_map(|&u| dataset.units[u].covariates.iter().copied())
                    .collect()
            };
            let (tx, cx) = (flat(t), flat(c));
            let cost = |i: usize, j: usize| distance(&tx[i * k..(i + 1) * k], &cx[j * k..(j + 1) * k], metric);
            let a = solve_assignment(t.len(), cost);
            let pairs = a
                .col_of_row
                .iter()
                .enumerate()
                .map(|(i, &j)| Pair {
                    treated_id: dataset.units[t[i]].id.clone(),
                    control_id: dataset.units[c[j]].id.clone(),
                    stratum: label.clone(),
                    distance: cost(i, j),
                })
                .collect();
            (pairs, a.total)
        })
        .collect();

    let mut pairs = Vec::new();
    let mut per_stratum = Vec::new();
    let mut total_distance = 0.0;
    for (s, (p, total)) in solved.into_iter().enumerate() {
        if !p.is_empty() {
            per_stratum.push(StratumPairs {
                label: dataset.strata[s].label(),
                pairs: p.len(),
                total_distance: total,
            });
        }
        total_distance += total;
        pairs.extend(p);
    }
    Ok(PairSet {
        pairs,
        total_distance,
        per_stratum,
        metric,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn from_matrix(m: &[Vec<f64>]) -> Assignment {
        solve_assignment(m.len(), |i, j| m[i][j])
    }

    #[test]
    fn distances() {
        assert_eq!(distance(&[1.0, 2.0], &[1.0, 2.0], Metric::L1), 0.0);
        assert_eq!(distance(&[0.0], &[1.5], Metric::L1), 1.5);
        assert_eq!(distance(&[0.0], &[1.5], Metric::L2), 1.5);
        assert!((distance(&[0.0, 0.0], &[3.0, 4.0], Metric::L2) - 5.0).abs() < 1e-15);
    }

    #[test]
    fn unique_two_by_two() {
        let a = from_matrix(&[vec![1.0, 2.0], vec![2.0, 1.0]]);
        assert_eq!(a.col_of_row, vec![0, 1]);
        assert_eq!(a.total, 2.0);
        let a = from_matrix(&[vec![5.0, 1.0], vec![1.0, 5.0]]);
        assert_eq!(a.col_of_row, vec![1, 0]);
    }

    #[test]
    fn equal_costs_give_identity() {
        for n in 1..8 {
            let a = solve_assignment(n, |_, _| 0.7);
            assert_eq!(a.col_of_row, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn ties_resolve_to_smallest_list() {
        // Rows 0 and 1 are interchangeable on columns 1 and 2; column 0 is only cheap for row 2.
        let m = vec![
            vec![9.0, 1.0, 1.0],
            vec![9.0, 1.0, 1.0],
            vec![0.0, 5.0, 5.0],
        ];
        let a = from_matrix(&m);
        assert_eq!(a.col_of_row, vec![1, 2, 0]);
        assert_eq!(a.total, 2.0);
    }
}
