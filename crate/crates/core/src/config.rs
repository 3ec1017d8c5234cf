//! Study configuration file.
//!
//! The file is JSON with five optional sections. Every key is checked against
//! the documented list before deserialization so that a typo fails loudly with
//! its full path (`solver.time_limt_s`) instead of being silently ignored.
//!
//! ```json
//! {
//!   "covariates": {
//!     "balance": ["female", "education_years"],
//!     "exact": ["age_cat", "ethnicity"],
//!     "ignore": [],
//!     "one_hot": [],
//!     "tolerance": 0.1,
//!     "tolerances": {"education_years": 0.05},
//!     "group_balance": true
//!   },
//!   "target": {"source": "treated", "path": null, "tolerance": 0.1, "tolerances": {}},
//!   "solver": {"time_limit_s": 600, "gap_abs": 0, "threads": 1, "seed": 0, "min_pairs": null},
//!   "pairing": {"metric": "l1"},
//!   "outcome": {"column": "outcome", "test": "mcnemar", "continuity_correction": false}
//! }
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::ColumnRoles;
use crate::error::{Error, Result};
use crate::outcome::TestKind;
use crate::pairing::Metric;

pub const DEFAULT_TOLERANCE: f64 = 0.1;

const SECTIONS: &[(&str, &[&str])] = &[
    (
        "covariates",
        &[
            "balance",
            "exact",
            "ignore",
            "one_hot",
            "tolerance",
            "tolerances",
            "group_balance",
        ],
    ),
    ("target", &["source", "path", "tolerance", "tolerances"]),
    (
        "solver",
        &["time_limit_s", "gap_abs", "threads", "seed", "min_pairs"],
    ),
    ("pairing", &["metric"]),
    ("outcome", &["column", "test", "continuity_correction"]),
];

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct StudySpec {
    pub covariates: CovariateConfig,
    pub target: TargetConfig,
    pub solver: SolverConfig,
    pub pairing: PairingConfig,
    pub outcome: OutcomeConfig,
}


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CovariateConfig {
    pub balance: Vec<String>,
    pub exact: Vec<String>,
    pub ignore: Vec<String>,
    pub one_hot: Vec<String>,
    pub tolerance: f64,
    pub tolerances: BTreeMap<String, f64>,
    pub group_balance: bool,
}

impl Default for CovariateConfig {
    fn default() -> Self {
        CovariateConfig {
            balance: Vec::new(),
            exact: Vec::new(),
            ignore: Vec::new(),
            one_hot: Vec::new(),
            tolerance: DEFAULT_TOLERANCE,
            tolerances: BTreeMap::new(),
            group_balance: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TargetSourceKind {
    #[default]
    None,
    Treated,
    Full,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TargetConfig {
    pub source: TargetSourceKind,
    pub path: Option<PathBuf>,
    pub tolerance: f64,
    pub tolerances: BTreeMap<String, f64>,
}

impl Default for TargetConfig {
    fn default() -> Self {
        TargetConfig {
            source: TargetSourceKind::None,
            path: None,
            tolerance: DEFAULT_TOLERANCE,
            tolerances: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub time_limit_s: f64,
    pub gap_abs: f64,
    pub threads: usize,
    pub seed: u64,
    pub min_pairs: Option<usize>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            time_limit_s: 600.0,
            gap_abs: 0.0,
            threads: 1,
            seed: 0,
            min_pairs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct PairingConfig {
    pub metric: Metric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct OutcomeConfig {
    pub column: Option<String>,
    pub test: TestKind,
    pub continuity_correction: bool,
}

impl StudySpec {
    /// Reads a config file; a relative `target.path` is resolved against the
    /// config file's directory.
    pub fn from_file(path: impl AsRef<Path>) -> Result<StudySpec> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut spec = Self::from_json_str(&text)?;
        if let (Some(p), Some(dir)) = (&spec.target.path, path.parent()) {
            if p.is_relative() {
                spec.target.path = Some(dir.join(p));
            }
        }
        Ok(spec)
    }

    pub fn from_json_str(text: &str) -> Result<StudySpec> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::Syntax {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        check_keys(&value)?;
        let spec: StudySpec =
            serde_json::from_value(value).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidTolerance {
                    name: name.to_string(),
                    value: v,
                })
            }
        };
        check("covariates.tolerance", self.covariates.tolerance)?;
        for (k, &v) in &self.covariates.tolerances {
            check(k, v)?;
        }
        check("target.tolerance", self.target.tolerance)?;
        for (k, &v) in &self.target.tolerances {
            check(k, v)?;
        }
        if self.target.source == TargetSourceKind::File && self.target.path.is_none() {
            return Err(Error::InvalidConfig(
                "target.source = \"file\" requires target.path".into(),
            ));
        }
        if !(self.solver.time_limit_s > 0.0) {
            return Err(Error::InvalidConfig(
                "solver.time_limit_s must be positive".into(),
            ));
        }
        if !(self.solver.gap_abs >= 0.0) || !self.solver.gap_abs.is_finite() {
            return Err(Error::InvalidConfig(
                "solver.gap_abs must be nonnegative".into(),
            ));
        }
        if self.solver.threads == 0 {
            return Err(Error::InvalidConfig("solver.threads must be at least 1".into()));
        }
        Ok(())
    }

    pub fn column_roles(&self) -> ColumnRoles {
        ColumnRoles {
            balance: self.covariates.balance.clone(),
            exact: self.covariates.exact.clone(),
            ignore: self.covariates.ignore.clone(),
            one_hot: self.covariates.one_hot.clone(),
            outcome: self.outcome.column.clone(),
        }
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

fn check_keys(value: &Value) -> Result<()> {
    let top = value
        .as_object()
        .ok_or_else(|| Error::InvalidConfig("config must be a JSON object".into()))?;
    for (section, body) in top {
        let allowed = SECTIONS
            .iter()
            .find(|(name, _)| name == section)
            .map(|(_, keys)| *keys)
            .ok_or_else(|| Error::UnknownKey(section.clone()))?;
        let body = body
            .as_object()
            .ok_or_else(|| Error::InvalidConfig(format!("section '{section}' must be an object")))?;
        for key in body.keys() {
            if !allowed.contains(&key.as_str()) {
                return Err(Error::UnknownKey(format!("{section}.{key}")));
            }
        }
    }
    Ok(())
}
