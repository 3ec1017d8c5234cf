//! Compilation of a study into the binary selection program.
//!
//! One binary variable per exposed unit (`a_t`) and per unexposed unit (`b_c`);
//! the objective is `sum a_t`. All rows are linear and, apart from an optional
//! minimum-size row, homogeneous:
//!
//! * per stratum: `sum_{t in S} a_t - sum_{c in S} b_c = 0`
//! * per balance covariate, both signs of
//!   `sum_t a_t x_tk - sum_c b_c x_ck <= delta_k * sum_t a_t`
//! * per covariate with a target profile, for each group,
//!   `|sum_t a_t (x_tk - tau_k)| <= eps_k * sum_t a_t` (and the same over `b_c`)
//!
//! Covariates enter in standardized units so tolerances read as SDs.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::Serialize;

use crate::config::{StudySpec, TargetSourceKind};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::solver::MatchSolution;

/// Slack below which a row counts as violated during verification.
pub const VERIFY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSource {
    TreatedSample,
    FullSample,
    ExternalAggregate,
}

/// Target means per balance covariate, raw and standardized.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TargetProfile {
    pub source: TargetSource,
    pub raw: Vec<f64>,
    pub standardized: Vec<f64>,
}

pub enum ProfileSource<'a> {
    TreatedSample,
    FullSample,
    Aggregate(&'a BTreeMap<String, f64>),
}

/// Reads `covariate,mean` rows from an aggregate summary file.
pub fn read_aggregate_means(path: impl AsRef<Path>) -> Result<BTreeMap<String, f64>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = rdr.headers()?.clone();
    let name_col = headers.iter().position(|h| h == "covariate");
    let mean_col = headers.iter().position(|h| h == "mean");
    let (Some(name_col), Some(mean_col)) = (name_col, mean_col) else {
        return Err(Error::InvalidConfig(format!(
            "{}: aggregate file needs 'covariate' and 'mean' columns",
            path.display()
        )));
    };
    let mut means = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let name = rec.get(name_col).unwrap_or("").to_string();
        let raw = rec.get(mean_col).unwrap_or("");
        let value: f64 = raw
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| Error::InvalidNumber {
                row,
                column: "mean".into(),
                value: raw.to_string(),
            })?;
        means.insert(name, value);
    }
    Ok(means)
}

pub fn derive_target_profile(source: ProfileSource<'_>, dataset: &Dataset) -> Result<TargetProfile> {
    let k = dataset.n_balance();
    let group_means = |filter: &dyn Fn(bool) -> bool| -> Vec<f64> {
        let mut sums = vec![0.0; k];
        let mut count = 0usize;
        for u in dataset.units.iter().filter(|u| filter(u.exposed)) {
            count += 1;
            for (s, x) in sums.iter_mut().zip(&u.raw) {
                *s += x;
            }
        }
        sums.into_iter().map(|s| s / count.max(1) as f64).collect()
    };
    let (kind, raw) = match source {
        ProfileSource::TreatedSample => (TargetSource::TreatedSample, group_means(&|e| e)),
        ProfileSource::FullSample => (TargetSource::FullSample, group_means(&|_| true)),
        ProfileSource::Aggregate(means) => {
            let raw = dataset
                .schema
                .balance
                .iter()
                .map(|name| {
                    means
                        .get(name)
                        .copied()
                        .ok_or_else(|| Error::MissingTargetMean(name.clone()))
                })
                .collect::<Result<Vec<_>>>()?;
            (TargetSource::ExternalAggregate, raw)
        }
    };
    let standardized = raw
        .iter()
        .zip(&dataset.schema.standardization)
        .map(|(&t, st)| st.apply(t))
        .collect();
    Ok(TargetProfile {
        source: kind,
        raw,
        standardized,
    })
}

/// Resolves the config's target section against a dataset.
pub fn target_from_spec(spec: &StudySpec, dataset: &Dataset) -> Result<Option<TargetProfile>> {
    match spec.target.source {
        TargetSourceKind::None => Ok(None),
        TargetSourceKind::Treated => {
            derive_target_profile(ProfileSource::TreatedSample, dataset).map(Some)
        }
        TargetSourceKind::Full => derive_target_profile(ProfileSource::FullSample, dataset).map(Some),
        TargetSourceKind::File => {
            let path = spec.target.path.as_ref().expect("validated");
            let means = read_aggregate_means(path)?;
            derive_target_profile(ProfileSource::Aggregate(&means), dataset).map(Some)
        }
    }
}

/// Tolerances in SD units, aligned with the dataset's balance covariates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalanceSpec {
    /// `None` disables the group-to-group rows.
    pub group_tolerance: Option<Vec<f64>>,
    /// Present exactly when a target profile is used.
    pub target_tolerance: Option<Vec<f64>>,
    pub min_pairs: Option<usize>,
}

impl BalanceSpec {
    pub fn uniform(k: usize, delta: f64) -> Self {
        BalanceSpec {
            group_tolerance: Some(vec![delta; k]),
            target_tolerance: None,
            min_pairs: None,
        }
    }

    pub fn with_target(mut self, eps: f64) -> Self {
        let k = self.group_tolerance.as_ref().map_or(0, Vec::len);
        self.target_tolerance = Some(vec![eps; k]);
        self
    }

    /// Same spec with every tolerance multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let scale = |v: &Vec<f64>| v.iter().map(|x| x * factor).collect();
        BalanceSpec {
            group_tolerance: self.group_tolerance.as_ref().map(scale),
            target_tolerance: self.target_tolerance.as_ref().map(scale),
            min_pairs: self.min_pairs,
        }
    }

    pub fn from_study(spec: &StudySpec, dataset: &Dataset, has_target: bool) -> Result<Self> {
        let names = &dataset.schema.balance;
        let resolve = |default: f64, overrides: &BTreeMap<String, f64>| -> Result<Vec<f64>> {
            for name in overrides.keys() {
                if !names.contains(name) {
                    return Err(Error::UnknownColumn(name.clone()));
                }
            }
            Ok(names
                .iter()
                .map(|n| overrides.get(n).copied().unwrap_or(default))
                .collect())
        };
        let group = resolve(spec.covariates.tolerance, &spec.covariates.tolerances)?;
        let target = resolve(spec.target.tolerance, &spec.target.tolerances)?;
        Ok(BalanceSpec {
            group_tolerance: spec.covariates.group_balance.then_some(group),
            target_tolerance: has_target.then_some(target),
            min_pairs: spec.solver.min_pairs,
        })
    }

    fn validate(&self, k: usize, has_target: bool) -> Result<()> {
        for (label, tol) in [("group", &self.group_tolerance), ("target", &self.target_tolerance)] {
            if let Some(tol) = tol {
                if tol.len() != k {
                    return Err(Error::InvalidConfig(format!(
                        "{label} tolerances cover {} covariates, dataset has {k}",
                        tol.len()
                    )));
                }
                if let Some(&bad) = tol.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                    return Err(Error::InvalidTolerance {
                        name: label.to_string(),
                        value: bad,
                    });
                }
            }
        }
        if has_target != self.target_tolerance.is_some() {
            return Err(Error::InvalidConfig(
                "target tolerances must be given exactly when a target profile is set".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Treated,
    Control,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Variable {
    /// Index of the unit in the dataset.
    pub unit: usize,
    pub id: String,
    pub group: Group,
    pub stratum: usize,
    /// 1 normally, 0 when the unit sits in a stratum that cannot form a pair.
    pub upper: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RowKind {
    Equal,
    LessEqual,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub name: String,
    pub kind: RowKind,
    pub coefficients: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl Row {
    pub fn activity(&self, x: &[f64]) -> f64 {
        self.coefficients.iter().map(|&(j, a)| a * x[j]).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StratumVars {
    pub label: String,
    pub treated: Vec<usize>,
    pub control: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionProblem {
    /// Exposed units first (dataset order), then unexposed units.
    pub variables: Vec<Variable>,
    pub rows: Vec<Row>,
    pub strata: Vec<StratumVars>,
}

impl SelectionProblem {
    pub fn n_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn objective(&self, j: usize) -> f64 {
        match self.variables[j].group {
            Group::Treated => 1.0,
            Group::Control => 0.0,
        }
    }

    /// Upper bound with every balance row dropped: `sum_s min(|T_s|, |C_s|)`.
    pub fn trivial_bound(&self) -> usize {
        self.strata
            .iter()
            .map(|s| s.treated.len().min(s.control.len()))
            .sum()
    }

    pub fn id_index(&self) -> HashMap<&str, usize> {
        self.variables
            .iter()
            .enumerate()
            .map(|(j, v)| (v.id.as_str(), j))
            .collect()
    }
}

/// Builds the selection program from a standardized dataset.
pub fn compile_problem(
    dataset: &Dataset,
    balance: &BalanceSpec,
    target: Option<&TargetProfile>,
) -> Result<SelectionProblem> {
    let k = dataset.n_balance();
    balance.validate(k, target.is_some())?;
    if dataset.strata.iter().all(|s| s.is_zero_capacity()) {
        return Err(Error::EmptyProblem);
    }

    let mut variables = Vec::with_capacity(dataset.units.len());
    for want in [true, false] {
        for (i, u) in dataset.units.iter().enumerate().filter(|(_, u)| u.exposed == want) {
            let stratum = dataset.stratum_of[i];
            variables.push(Variable {
                unit: i,
                id: u.id.clone(),
                group: if want { Group::Treated } else { Group::Control },
                stratum,
                upper: if dataset.strata[stratum].is_zero_capacity() {
                    0.0
                } else {
                    1.0
                },
            });
        }
    }
    let mut strata: Vec<StratumVars> = dataset
        .strata
        .iter()
        .map(|s| StratumVars {
            label: s.label(),
            treated: Vec::new(),
            control: Vec::new(),
        })
        .collect();
    for (j, v) in variables.iter().enumerate() {
        match v.group {
            Group::Treated => strata[v.stratum].treated.push(j),
            Group::Control => strata[v.stratum].control.push(j),
        }
    }

    let x = |j: usize, c: usize| dataset.units[variables[j].unit].covariates[c];
    let sign = |j: usize| match variables[j].group {
        Group::Treated => 1.0,
        Group::Control => -1.0,
    };
    let mut rows = Vec::new();
    for s in &strata {
        rows.push(Row {
            name: format!("stratum[{}]", s.label),
            kind: RowKind::Equal,
            coefficients: s
                .treated
                .iter()
                .chain(&s.control)
                .map(|&j| (j, sign(j)))
                .collect(),
            rhs: 0.0,
        });
    }
    let all: Vec<usize> = (0..variables.len()).collect();
    if let Some(delta) = &balance.group_tolerance {
        for (c, name) in dataset.schema.balance.iter().enumerate() {
            let d = delta[c];
            // Treated mean minus control mean <= delta, and the reverse.
            for (suffix, dir) in [("upper", 1.0), ("lower", -1.0)] {
                let coefficients = all
                    .iter()
                    .map(|&j| {
                        let coef = match variables[j].group {
                            Group::Treated => dir * x(j, c) - d,
                            Group::Control => -dir * x(j, c),
                        };
                        (j, coef)
                    })
                    .collect();
                rows.push(Row {
                    name: format!("balance[{name}]:{suffix}"),
                    kind: RowKind::LessEqual,
                    coefficients,
                    rhs: 0.0,
                });
            }
        }
    }
    if let (Some(target), Some(eps)) = (target, &balance.target_tolerance) {
        for (c, name) in dataset.schema.balance.iter().enumerate() {
            let tau = target.standardized[c];
            let e = eps[c];
            for (group, label) in [(Group::Treated, "treated"), (Group::Control, "control")] {
                let members: Vec<usize> = all
                    .iter()
                    .copied()
                    .filter(|&j| variables[j].group == group)
                    .collect();
                for (suffix, dir) in [("upper", 1.0), ("lower", -1.0)] {
                    rows.push(Row {
                        name: format!("target[{name}]:{label}:{suffix}"),
                        kind: RowKind::LessEqual,
                        coefficients: members
                            .iter()
                            .map(|&j| (j, dir * (x(j, c) - tau) - e))
                            .collect(),
                        rhs: 0.0,
                    });
                }
            }
        }
    }
    if let Some(m) = balance.min_pairs {
        rows.push(Row {
            name: "min_pairs".into(),
            kind: RowKind::LessEqual,
            coefficients: variables
                .iter()
                .enumerate()
                .filter(|(_, v)| v.group == Group::Treated)
                .map(|(j, _)| (j, -1.0))
                .collect(),
            rhs: -(m as f64),
        });
    }
    Ok(SelectionProblem {
        variables,
        rows,
        strata,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowCheck {
    pub name: String,
    pub activity: f64,
    pub rhs: f64,
    /// `rhs - activity` for inequalities, `-|activity - rhs|` for equalities.
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeasibilityReport {
    pub pass: bool,
    pub n: usize,
    pub rows: Vec<RowCheck>,
    /// Problems outside the constraint rows (unknown ids, fixed-out units).
    pub issues: Vec<String>,
}

impl FeasibilityReport {
    pub fn violations(&self) -> impl Iterator<Item = &RowCheck> {
        self.rows.iter().filter(|r| r.slack < -VERIFY_TOLERANCE)
    }
}

/// Re-evaluates every row for a 0/1 selection indexed by variable.
pub fn verify_selection(problem: &SelectionProblem, selected: &[bool]) -> FeasibilityReport {
    let x: Vec<f64> = selected.iter().map(|&s| if s { 1.0 } else { 0.0 }).collect();
    let mut issues = Vec::new();
    if selected.len() != problem.n_vars() {
        issues.push(format!(
            "selection covers {} variables, problem has {}",
            selected.len(),
            problem.n_vars()
        ));
    }
    for (j, v) in problem.variables.iter().enumerate() {
        if selected.get(j) == Some(&true) && v.upper < 0.5 {
            issues.push(format!("unit '{}' is in a stratum that cannot form pairs", v.id));
        }
    }
    let rows: Vec<RowCheck> = if issues.is_empty() {
        problem
            .rows
            .iter()
            .map(|row| {
                let activity: f64 = row
                    .coefficients
                    .iter()
                    .filter(|&&(j, _)| selected[j])
                    .map(|&(_, a)| a)
                    .sum();
                let slack = match row.kind {
                    RowKind::LessEqual => row.rhs - activity,
                    RowKind::Equal => -(activity - row.rhs).abs(),
                };
                RowCheck {
                    name: row.name.clone(),
                    activity,
                    rhs: row.rhs,
                    slack,
                }
            })
            .collect()
    } else {
        Vec::new()
    };
    let n = problem
        .variables
        .iter()
        .zip(x)
        .filter(|(v, xv)| v.group == Group::Treated && *xv > 0.5)
        .count();
    let pass = issues.is_empty() && rows.iter().all(|r| r.slack >= -VERIFY_TOLERANCE);
    FeasibilityReport {
        pass,
        n,
        rows,
        issues,
    }
}

/// Checks a solution's selected ids against the problem with fresh arithmetic.
pub fn verify_solution(problem: &SelectionProblem, solution: &MatchSolution) -> FeasibilityReport {
    let index = problem.id_index();
    let mut selected = vec![false; problem.n_vars()];
    let mut issues = Vec::new();
    for (ids, group) in [
        (&solution.treated_ids, Group::Treated),
        (&solution.control_ids, Group::Control),
    ] {
        for id in ids {
            match index.get(id.as_str()) {
                Some(&j) if problem.variables[j].group == group => {
                    if std::mem::replace(&mut selected[j], true) {
                        issues.push(format!("unit '{id}' selected twice"));
                    }
                }
                Some(_) => issues.push(format!("unit '{id}' listed in the wrong group")),
                None => issues.push(format!("unknown unit '{id}'")),
            }
        }
    }
    let mut report = verify_selection(problem, &selected);
    if solution.treated_ids.len() != solution.control_ids.len() {
        issues.push(format!(
            "{} exposed and {} unexposed units selected",
            solution.treated_ids.len(),
            solution.control_ids.len()
        ));
    }
    if !issues.is_empty() {
        report.pass = false;
        report.issues.extend(issues);
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::UnitRecord;

    fn rec(id: &str, exposed: bool, raw: &[f64], keys: &[&str]) -> UnitRecord {
        UnitRecord {
            id: id.into(),
            exposed,
            raw: raw.to_vec(),
            exact_keys: keys.iter().map(|s| s.to_string()).collect(),
            outcome: None,
        }
    }

    fn two_cov_dataset() -> Dataset {
        let records = vec![
            rec("t1", true, &[1.0, 0.0], &[]),
            rec("t2", true, &[2.0, 1.0], &[]),
            rec("c1", false, &[0.5, 1.0], &[]),
            rec("c2", false, &[1.5, 0.0], &[]),
            rec("c3", false, &[3.0, 1.0], &[]),
        ];
        Dataset::from_records(records, vec!["x1".into(), "x2".into()], vec![]).unwrap()
    }

    #[test]
    fn row_count_with_target_and_group_rows() {
        let ds = two_cov_dataset();
        let target = derive_target_profile(ProfileSource::TreatedSample, &ds).unwrap();
        let spec = BalanceSpec::uniform(2, 0.1).with_target(0.1);
        let p = compile_problem(&ds, &spec, Some(&target)).unwrap();
        assert_eq!(p.rows.len(), 1 + 4 + 8);
        assert_eq!(p.n_vars(), 5);
    }

    #[test]
    fn strata_only_rows() {
        let records = vec![
            rec("t1", true, &[1.0], &["a"]),
            rec("c1", false, &[2.0], &["a"]),
            rec("t2", true, &[3.0], &["b"]),
            rec("c2", false, &[4.0], &["b"]),
            rec("t3", true, &[0.0], &["c"]),
            rec("c3", false, &[5.0], &["c"]),
        ];
        let ds = Dataset::from_records(records, vec!["x".into()], vec!["g".into()]).unwrap();
        let spec = BalanceSpec {
            group_tolerance: None,
            target_tolerance: None,
            min_pairs: None,
        };
        let p = compile_problem(&ds, &spec, None).unwrap();
        assert_eq!(p.rows.len(), 3);
        assert!(p.rows.iter().all(|r| r.kind == RowKind::Equal));
    }

    #[test]
    fn empty_problem_when_no_stratum_has_both_groups() {
        let records = vec![
            rec("t1", true, &[1.0], &["a"]),
            rec("c1", false, &[2.0], &["b"]),
            rec("c2", false, &[3.0], &["b"]),
        ];
        let ds = Dataset::from_records(records, vec!["x".into()], vec!["g".into()]).unwrap();
        let err = compile_problem(&ds, &BalanceSpec::uniform(1, 0.1), None).unwrap_err();
        assert!(matches!(err, Error::EmptyProblem));
    }

    #[test]
    fn zero_capacity_stratum_variables_fixed() {
        let records = vec![
            rec("t1", true, &[1.0], &["a"]),
            rec("c1", false, &[2.0], &["a"]),
            rec("t2", true, &[3.0], &["b"]),
        ];
        let ds = Dataset::from_records(records, vec!["x".into()], vec!["g".into()]).unwrap();
        let p = compile_problem(&ds, &BalanceSpec::uniform(1, 0.1), None).unwrap();
        let t2 = p.variables.iter().find(|v| v.id == "t2").unwrap();
        assert_eq!(t2.upper, 0.0);
        assert_eq!(p.trivial_bound(), 1);
    }

    #[test]
    fn target_means_from_sources() {
        let ds = two_cov_dataset();
        let t = derive_target_profile(ProfileSource::TreatedSample, &ds).unwrap();
        assert_eq!(t.raw, vec![1.5, 0.5]);
        let full = derive_target_profile(ProfileSource::FullSample, &ds).unwrap();
        let mut agg = BTreeMap::new();
        agg.insert("x1".to_string(), full.raw[0]);
        agg.insert("x2".to_string(), full.raw[1]);
        let ext = derive_target_profile(ProfileSource::Aggregate(&agg), &ds).unwrap();
        assert_eq!(ext.source, TargetSource::ExternalAggregate);
        for z in ext.standardized {
            assert!(z.abs() < 1e-12);
        }
        agg.remove("x2");
        let err = derive_target_profile(ProfileSource::Aggregate(&agg), &ds).unwrap_err();
        assert!(matches!(err, Error::MissingTargetMean(ref n) if n == "x2"));
    }

    #[test]
    fn empty_selection_is_feasible() {
        let ds = two_cov_dataset();
        let target = derive_target_profile(ProfileSource::TreatedSample, &ds).unwrap();
        let p = compile_problem(&ds, &BalanceSpec::uniform(2, 0.1).with_target(0.1), Some(&target))
            .unwrap();
        let report = verify_selection(&p, &vec![false; p.n_vars()]);
        assert!(report.pass);
        assert_eq!(report.n, 0);
    }

    #[test]
    fn constructed_violation_names_the_row() {
        // One covariate; treated at +1, control at 0 (standardized); n = 1.
        // Treated minus control mean is 1/s, chosen so it overshoots delta by 0.5*delta.
        let records = vec![
            rec("t1", true, &[0.0], &[]),
            rec("t2", true, &[1.0], &[]),
            rec("c1", false, &[0.0], &[]),
            rec("c2", false, &[1.0], &[]),
        ];
        let ds = Dataset::from_records(records, vec!["x".into()], vec![]).unwrap();
        let gap = ds.units[1].covariates[0] - ds.units[2].covariates[0];
        let delta = gap / 1.5;
        let p = compile_problem(&ds, &BalanceSpec::uniform(1, delta), None).unwrap();
        let id = p.id_index();
        let mut sel = vec![false; p.n_vars()];
        sel[id["t2"]] = true;
        sel[id["c1"]] = true;
        let report = verify_selection(&p, &sel);
        assert!(!report.pass);
        let bad: Vec<_> = report.violations().collect();
        assert_eq!(bad.len(), 1);
        assert_eq!(bad[0].name, "balance[x]:upper");
        assert!((bad[0].slack + 0.5 * delta).abs() < 1e-12);
    }

    #[test]
    fn scaling_a_covariate_leaves_rows_unchanged() {
        let ds = two_cov_dataset();
        let mut records = ds.records();
        for r in &mut records {
            r.raw[0] = 3.7 * r.raw[0] - 11.0;
        }
        let scaled = Dataset::from_records(records, ds.schema.balance.clone(), vec![]).unwrap();
        let spec = BalanceSpec::uniform(2, 0.2).with_target(0.1);
        let t1 = derive_target_profile(ProfileSource::FullSample, &ds).unwrap();
        let t2 = derive_target_profile(ProfileSource::FullSample, &scaled).unwrap();
        let p1 = compile_problem(&ds, &spec, Some(&t1)).unwrap();
        let p2 = compile_problem(&scaled, &spec, Some(&t2)).unwrap();
        for (r1, r2) in p1.rows.iter().zip(&p2.rows) {
            for (a, b) in r1.coefficients.iter().zip(&r2.coefficients) {
                assert_eq!(a.0, b.0);
                assert!((a.1 - b.1).abs() < 1e-10);
            }
        }
    }
}
