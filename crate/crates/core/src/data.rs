//! Unit-level observational data: loading, validation, standardization and
//! exact-match stratification.
//!
//! A [`Dataset`] is immutable once built. Balance covariates are held twice:
//! the raw values as read, and the standardized values `(x - mean) / pooled_sd`
//! where the mean is taken over the full sample and the pooled SD is
//! `sqrt((s_T^2 + s_C^2) / 2)` from the two groups' sample variances.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ID_COLUMN: &str = "id";
pub const EXPOSED_COLUMN: &str = "exposed";
pub const OUTCOME_COLUMN: &str = "outcome";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Balance,
    Exact,
    Ignore,
}

/// Mean and pooled standard deviation used to standardize one covariate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: f64,
    pub pooled_sd: f64,
}

impl Standardization {
    pub fn apply(&self, raw: f64) -> f64 {
        (raw - self.mean) / self.pooled_sd
    }

    pub fn invert(&self, standardized: f64) -> f64 {
        standardized * self.pooled_sd + self.mean
    }
}

/// Which columns play which role, as requested by the study config.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ColumnRoles {
    pub balance: Vec<String>,
    pub exact: Vec<String>,
    pub ignore: Vec<String>,
    /// Categorical columns expanded into one balance indicator per level.
    pub one_hot: Vec<String>,
    /// Outcome column; when `None` a column literally named `outcome` is used if present.
    pub outcome: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Unit {
    pub id: String,
    pub exposed: bool,
    /// Standardized balance covariates.
    pub covariates: Vec<f64>,
    /// Balance covariates as read.
    pub raw: Vec<f64>,
    pub exact_keys: Vec<String>,
    pub outcome: Option<f64>,
}

/// Raw unit description used to build a [`Dataset`] programmatically.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitRecord {
    pub id: String,
    pub exposed: bool,
    pub raw: Vec<f64>,
    pub exact_keys: Vec<String>,
    pub outcome: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovariateSchema {
    /// Every non-reserved column of the source with its role.
    pub columns: Vec<(String, Role)>,
    pub balance: Vec<String>,
    pub exact: Vec<String>,
    pub standardization: Vec<Standardization>,
}

impl CovariateSchema {
    pub fn balance_index(&self, name: &str) -> Option<usize> {
        self.balance.iter().position(|b| b == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stratum {
    pub key: Vec<String>,
    pub members: Vec<usize>,
    pub n_treated: usize,
    pub n_control: usize,
}

impl Stratum {
    pub fn label(&self) -> String {
        if self.key.is_empty() {
            "all".to_string()
        } else {
            self.key.join("|")
        }
    }

    /// A stratum that cannot contribute a single pair.
    pub fn is_zero_capacity(&self) -> bool {
        self.n_treated == 0 || self.n_control == 0
    }

    pub fn capacity(&self) -> usize {
        self.n_treated.min(self.n_control)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub units: Vec<Unit>,
    pub schema: CovariateSchema,
    pub strata: Vec<Stratum>,
    /// Stratum index of every unit.
    pub stratum_of: Vec<usize>,
}

/// Mean and pooled SD of one column; errors only through the caller's naming.
pub fn standardization(values: &[f64], exposed: &[bool]) -> Option<Standardization> {
    assert_eq!(values.len(), exposed.len());
    if values.is_empty() {
        return None;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let group_var = |want: bool| {
        let xs: Vec<f64> = values
            .iter()
            .zip(exposed)
            .filter(|(_, &e)| e == want)
            .map(|(&v, _)| v)
            .collect();
        sample_variance(&xs)
    };
    let pooled_sd = ((group_var(true) + group_var(false)) / 2.0).sqrt();
    if !(pooled_sd > 0.0) || !pooled_sd.is_finite() {
        return None;
    }
    Some(Standardization { mean, pooled_sd })
}

/// Sample variance with the n-1 denominator; zero for fewer than two values.
pub(crate) fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)
}

/// Standardizes one column against its own full-sample mean and pooled SD.
pub fn standardize_column(
    name: &str,
    values: &[f64],
    exposed: &[bool],
) -> Result<(Standardization, Vec<f64>)> {
    let st = standardization(values, exposed)
        .ok_or_else(|| Error::ConstantCovariate(name.to_string()))?;
    Ok((st, values.iter().map(|&v| st.apply(v)).collect()))
}

/// Groups unit indices by their exact-key tuple. Strata come back in key order.
pub fn build_strata(units: &[Unit]) -> (Vec<Stratum>, Vec<usize>) {
    let mut groups: BTreeMap<&[String], Vec<usize>> = BTreeMap::new();
    for (i, u) in units.iter().enumerate() {
        groups.entry(u.exact_keys.as_slice()).or_default().push(i);
    }
    let mut stratum_of = vec![0; units.len()];
    let strata: Vec<Stratum> = groups
        .into_iter()
        .enumerate()
        .map(|(s, (key, members))| {
            let n_treated = members.iter().filter(|&&i| units[i].exposed).count();
            for &i in &members {
                stratum_of[i] = s;
            }
            let stratum = Stratum {
                key: key.to_vec(),
                n_control: members.len() - n_treated,
                n_treated,
                members,
            };
            if stratum.is_zero_capacity() {
                log::warn!(
                    "stratum '{}' has {} exposed and {} unexposed units; it cannot contribute pairs",
                    stratum.label(),
                    stratum.n_treated,
                    stratum.n_control
                );
            }
            stratum
        })
        .collect();
    (strata, stratum_of)
}

impl Dataset {
    /// Validates records and computes standardization and strata.
    pub fn from_records(
        records: Vec<UnitRecord>,
        balance: Vec<String>,
        exact: Vec<String>,
    ) -> Result<Dataset> {
        let columns = balance
            .iter()
            .map(|b| (b.clone(), Role::Balance))
            .chain(exact.iter().map(|e| (e.clone(), Role::Exact)))
            .collect();
        Self::from_records_with_columns(records, balance, exact, columns)
    }

    fn from_records_with_columns(
        records: Vec<UnitRecord>,
        balance: Vec<String>,
        exact: Vec<String>,
        columns: Vec<(String, Role)>,
    ) -> Result<Dataset> {
        let mut seen = HashSet::with_capacity(records.len());
        for (row, r) in records.iter().enumerate() {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::DuplicateId(r.id.clone()));
            }
            if r.raw.len() != balance.len() || r.exact_keys.len() != exact.len() {
                return Err(Error::InvalidConfig(format!(
                    "unit '{}' has {} covariates and {} exact keys, schema expects {} and {}",
                    r.id,
                    r.raw.len(),
                    r.exact_keys.len(),
                    balance.len(),
                    exact.len()
                )));
            }
            if let Some(k) = r.raw.iter().position(|v| !v.is_finite()) {
                return Err(Error::MissingValue {
                    row: row + 1,
                    column: balance[k].clone(),
                });
            }
        }
        let exposed: Vec<bool> = records.iter().map(|r| r.exposed).collect();
        let mut standardization = Vec::with_capacity(balance.len());
        let mut column = vec![0.0; records.len()];
        for (k, name) in balance.iter().enumerate() {
            for (slot, r) in column.iter_mut().zip(&records) {
                *slot = r.raw[k];
            }
            let st = self::standardization(&column, &exposed)
                .ok_or_else(|| Error::ConstantCovariate(name.clone()))?;
            standardization.push(st);
        }
        let units: Vec<Unit> = records
            .into_iter()
            .map(|r| Unit {
                covariates: r
                    .raw
                    .iter()
                    .zip(&standardization)
                    .map(|(&x, st)| st.apply(x))
                    .collect(),
                id: r.id,
                exposed: r.exposed,
                raw: r.raw,
                exact_keys: r.exact_keys,
                outcome: r.outcome,
            })
            .collect();
        let (strata, stratum_of) = build_strata(&units);
        Ok(Dataset {
            units,
            schema: CovariateSchema {
                columns,
                balance,
                exact,
                standardization,
            },
            strata,
            stratum_of,
        })
    }

    /// Recomputes standardization from the raw covariates.
    pub fn standardize(&self) -> Result<Dataset> {
        if self.schema.balance.is_empty() {
            return Err(Error::InvalidConfig(
                "standardization needs at least one balance covariate".into(),
            ));
        }
        let records = self.records();
        Self::from_records_with_columns(
            records,
            self.schema.balance.clone(),
            self.schema.exact.clone(),
            self.schema.columns.clone(),
        )
    }

    pub fn records(&self) -> Vec<UnitRecord> {
        self.units
            .iter()
            .map(|u| UnitRecord {
                id: u.id.clone(),
                exposed: u.exposed,
                raw: u.raw.clone(),
                exact_keys: u.exact_keys.clone(),
                outcome: u.outcome,
            })
            .collect()
    }

    pub fn n_treated(&self) -> usize {
        self.units.iter().filter(|u| u.exposed).count()
    }

    pub fn n_control(&self) -> usize {
        self.units.len() - self.n_treated()
    }

    pub fn n_balance(&self) -> usize {
        self.schema.balance.len()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.units.iter().position(|u| u.id == id)
    }

    pub fn has_outcome(&self) -> bool {
        !self.units.is_empty() && self.units.iter().all(|u| u.outcome.is_some())
    }

    /// Reads a CSV file and validates it against the requested roles.
    pub fn load_csv(path: impl AsRef<Path>, roles: &ColumnRoles) -> Result<Dataset> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(file, roles)
    }

    pub fn read_csv<R: std::io::Read>(reader: R, roles: &ColumnRoles) -> Result<Dataset> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let id_col = col(ID_COLUMN).ok_or_else(|| Error::MissingColumn(ID_COLUMN.into()))?;
        let exposed_col =
            col(EXPOSED_COLUMN).ok_or_else(|| Error::MissingColumn(EXPOSED_COLUMN.into()))?;
        let outcome_col = match &roles.outcome {
            Some(name) => Some(col(name).ok_or_else(|| Error::UnknownColumn(name.clone()))?),
            None => col(OUTCOME_COLUMN),
        };

        let mut assigned: BTreeMap<&str, Role> = BTreeMap::new();
        let lists = [
            (&roles.balance, Role::Balance),
            (&roles.one_hot, Role::Balance),
            (&roles.exact, Role::Exact),
            (&roles.ignore, Role::Ignore),
        ];
        for (names, role) in lists {
            for name in names {
                if col(name).is_none() {
                    return Err(Error::UnknownColumn(name.clone()));
                }
                let reserved = name == ID_COLUMN
                    || name == EXPOSED_COLUMN
                    || outcome_col.is_some_and(|o| headers[o] == *name);
                if reserved || assigned.insert(name.as_str(), role).is_some() {
                    return Err(Error::ConflictingRole(name.clone()));
                }
            }
        }

        let mut raw_rows: Vec<(usize, csv::StringRecord)> = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
            raw_rows.push((line, rec));
        }

        let cell = |line: usize, rec: &csv::StringRecord, c: usize| -> Result<String> {
            let v = rec.get(c).unwrap_or("");
            if v.is_empty() || v.eq_ignore_ascii_case("na") || v.eq_ignore_ascii_case("nan") {
                return Err(Error::MissingValue {
                    row: line,
                    column: headers[c].clone(),
                });
            }
            Ok(v.to_string())
        };
        let number = |line: usize, rec: &csv::StringRecord, c: usize| -> Result<f64> {
            let v = cell(line, rec, c)?;
            v.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| Error::InvalidNumber {
                    row: line,
                    column: headers[c].clone(),
                    value: v,
                })
        };

        // Balance columns in config order, one-hot columns expanded in place after them.
        let mut balance_names: Vec<String> = roles.balance.clone();
        let mut one_hot_levels: Vec<(usize, Vec<String>)> = Vec::new();
        for name in &roles.one_hot {
            let c = col(name).expect("checked above");
            let mut levels = BTreeSet::new();
            for (line, rec) in &raw_rows {
                levels.insert(cell(*line, rec, c)?);
            }
            let levels: Vec<String> = levels.into_iter().collect();
            balance_names.extend(levels.iter().map(|l| format!("{name}={l}")));
            one_hot_levels.push((c, levels));
        }
        let balance_cols: Vec<usize> = roles.balance.iter().filter_map(|n| col(n)).collect();
        let exact_cols: Vec<usize> = roles.exact.iter().filter_map(|n| col(n)).collect();

        let mut records = Vec::with_capacity(raw_rows.len());
        for (line, rec) in &raw_rows {
            let line = *line;
            let id = cell(line, rec, id_col)?;
            let exposed = match cell(line, rec, exposed_col)?.as_str() {
                "0" => false,
                "1" => true,
                other => {
                    return Err(Error::NonBinaryExposure {
                        row: line,
                        value: other.to_string(),
                    })
                }
            };
            let mut raw = Vec::with_capacity(balance_names.len());
            for &c in &balance_cols {
                raw.push(number(line, rec, c)?);
            }
            for (c, levels) in &one_hot_levels {
                let v = cell(line, rec, *c)?;
                raw.extend(levels.iter().map(|l| if *l == v { 1.0 } else { 0.0 }));
            }
            let exact_keys = exact_cols
                .iter()
                .map(|&c| cell(line, rec, c))
                .collect::<Result<Vec<_>>>()?;
            let outcome = outcome_col.map(|c| number(line, rec, c)).transpose()?;
            records.push(UnitRecord {
                id,
                exposed,
                raw,
                exact_keys,
                outcome,
            });
        }

        let columns = headers
            .iter()
            .enumerate()
            .filter(|(c, _)| *c != id_col && *c != exposed_col && Some(*c) != outcome_col)
            .map(|(_, h)| {
                let role = assigned.get(h.as_str()).copied().unwrap_or(Role::Ignore);
                (h.clone(), role)
            })
            .collect();
        Self::from_records_with_columns(records, balance_names, roles.exact.clone(), columns)
    }

    /// Writes id, exposure, raw balance covariates, exact keys and outcome.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        self.write_csv_to(&mut out).map_err(|e| Error::io(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_csv_to<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        let with_outcome = self.has_outcome();
        let mut header = vec![ID_COLUMN.to_string(), EXPOSED_COLUMN.to_string()];
        header.extend(self.schema.balance.iter().cloned());
        header.extend(self.schema.exact.iter().cloned());
        if with_outcome {
            header.push(OUTCOME_COLUMN.to_string());
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&header)?;
        for u in &self.units {
            let mut row = vec![u.id.clone(), if u.exposed { "1" } else { "0" }.to_string()];
            row.extend(u.raw.iter().map(|v| v.to_string()));
            row.extend(u.exact_keys.iter().cloned());
            if with_outcome {
                row.push(u.outcome.map(|v| v.to_string()).unwrap_or_default());
            }
            w.write_record(&row)?;
        }
        w.flush()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roles(balance: &[&str], exact: &[&str]) -> ColumnRoles {
        ColumnRoles {
            balance: balance.iter().map(|s| s.to_string()).collect(),
            exact: exact.iter().map(|s| s.to_string()).collect(),
            ..Default::default()
        }
    }

    #[test]
    fn loads_four_row_file() {
        let csv = "id,exposed,x1,x2\na,1,0.5,2\nb,1,1.5,3\nc,0,0.1,1\nd,0,0.3,5\n";
        let ds = Dataset::read_csv(csv.as_bytes(), &roles(&["x1", "x2"], &[])).unwrap();
        assert_eq!(ds.n_treated(), 2);
        assert_eq!(ds.n_control(), 2);
        assert_eq!(ds.schema.balance.len(), 2);
        assert_eq!(ds.units[1].raw, vec![1.5, 3.0]);
        assert_eq!(ds.strata.len(), 1);
    }

    #[test]
    fn empty_cell_is_missing_value() {
        let csv = "id,exposed,x1\na,1,0.5\nb,1,\nc,0,0.1\nd,0,0.3\n";
        let err = Dataset::read_csv(csv.as_bytes(), &roles(&["x1"], &[])).unwrap_err();
        assert!(matches!(err, Error::MissingValue { row: 3, ref column } if column == "x1"));
    }

    #[test]
    fn constant_column_rejected() {
        let csv = "id,exposed,x1\na,1,2\nb,1,2\nc,0,2\nd,0,2\n";
        let err = Dataset::read_csv(csv.as_bytes(), &roles(&["x1"], &[])).unwrap_err();
        assert!(matches!(err, Error::ConstantCovariate(ref n) if n == "x1"));
    }

    #[test]
    fn other_validation_errors() {
        let dup = "id,exposed,x1\na,1,1\na,0,2\n";
        assert!(matches!(
            Dataset::read_csv(dup.as_bytes(), &roles(&["x1"], &[])),
            Err(Error::DuplicateId(_))
        ));
        let nonbinary = "id,exposed,x1\na,2,1\nb,0,2\n";
        assert!(matches!(
            Dataset::read_csv(nonbinary.as_bytes(), &roles(&["x1"], &[])),
            Err(Error::NonBinaryExposure { row: 2, .. })
        ));
        let ok = "id,exposed,x1\na,1,1\nb,0,2\n";
        assert!(matches!(
            Dataset::read_csv(ok.as_bytes(), &roles(&["x9"], &[])),
            Err(Error::UnknownColumn(ref n)) if n == "x9"
        ));
        let bad = "id,exposed,x1\na,1,abc\nb,0,2\n";
        assert!(matches!(
            Dataset::read_csv(bad.as_bytes(), &roles(&["x1"], &[])),
            Err(Error::InvalidNumber { .. })
        ));
    }

    #[test]
    fn two_point_column_standardizes_with_pooled_sample_sd() {
        // Each group holds {0, 1}: mean 0.5, group sample variance 0.5, pooled SD sqrt(0.5).
        let (st, z) = standardize_column("x", &[0.0, 1.0, 0.0, 1.0], &[true, true, false, false])
            .unwrap();
        assert!((st.mean - 0.5).abs() < 1e-15);
        assert!((st.pooled_sd - 0.5f64.sqrt()).abs() < 1e-15);
        let h = 0.5f64.sqrt();
        for (got, want) in z.iter().zip([-h, h, -h, h]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn standardization_is_idempotent() {
        let xs = [0.3, -1.2, 2.5, 0.0, 4.1, -0.7];
        let ex = [true, false, true, false, true, false];
        let (_, z) = standardize_column("x", &xs, &ex).unwrap();
        let (st, z2) = standardize_column("x", &z, &ex).unwrap();
        assert!(st.mean.abs() < 1e-12 && (st.pooled_sd - 1.0).abs() < 1e-12);
        for (a, b) in z.iter().zip(&z2) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn strata_partition_and_zero_capacity() {
        let csv = "id,exposed,x,g\n\
                   a,1,1,p\nb,1,2,p\nc,1,3,p\nd,0,4,q\ne,1,5,q\nf,0,6,q\n";
        let ds = Dataset::read_csv(csv.as_bytes(), &roles(&["x"], &["g"])).unwrap();
        assert_eq!(ds.strata.len(), 2);
        let p = &ds.strata[0];
        assert_eq!(p.key, vec!["p".to_string()]);
        assert_eq!((p.n_treated, p.n_control), (3, 0));
        assert!(p.is_zero_capacity());
        assert!(!ds.strata[1].is_zero_capacity());
        let total: usize = ds.strata.iter().map(|s| s.members.len()).sum();
        assert_eq!(total, ds.units.len());
    }

    #[test]
    fn no_exact_columns_gives_single_stratum() {
        let csv = "id,exposed,x\na,1,1\nb,0,2\nc,0,3\n";
        let ds = Dataset::read_csv(csv.as_bytes(), &roles(&["x"], &[])).unwrap();
        assert_eq!(ds.strata.len(), 1);
        assert_eq!(ds.strata[0].label(), "all");
        assert_eq!(ds.strata[0].members, vec![0, 1, 2]);
    }

    #[test]
    fn one_hot_expands_levels() {
        let csv = "id,exposed,x,eth\na,1,1,b\nb,0,2,a\nc,1,3,a\nd,0,5,b\n";
        let r = ColumnRoles {
            balance: vec!["x".into()],
            one_hot: vec!["eth".into()],
            ..Default::default()
        };
        let ds = Dataset::read_csv(csv.as_bytes(), &r).unwrap();
        assert_eq!(ds.schema.balance, vec!["x", "eth=a", "eth=b"]);
        assert_eq!(ds.units[0].raw, vec![1.0, 0.0, 1.0]);
    }

    #[test]
    fn csv_round_trip_is_bit_identical() {
        let csv = "id,exposed,x1,x2,g,outcome\n\
                   a,1,0.1,3.3333333333333335,u,1\nb,0,0.2,1e-7,u,0\n\
                   c,1,-7.25,2,v,0\nd,0,1.0000000000000002,8,v,1\n";
        let r = roles(&["x1", "x2"], &["g"]);
        let ds = Dataset::read_csv(csv.as_bytes(), &r).unwrap();
        let mut buf = Vec::new();
        ds.write_csv_to(&mut buf).unwrap();
        let again = Dataset::read_csv(buf.as_slice(), &r).unwrap();
        assert_eq!(ds.units, again.units);
    }
}
