//! Cardinality matching for observational studies.
//!
//! The pipeline loads a dataset ([`data`]), compiles a 0/1 selection program
//! with balance rows ([`problem`]), solves it for the largest balanced matched
//! sample ([`solver`]), pairs the selected units within strata ([`pairing`]),
//! and reports balance ([`diagnostics`]) and outcome tests ([`outcome`]).
//! [`psm`] provides a greedy propensity-score baseline and [`synth`]
//! generates synthetic studies and benchmark instances.

// Negated float comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod outcome;
pub mod pipeline;
pub mod pairing;
pub mod problem;
pub mod psm;
pub mod solver;
pub mod synth;

pub use config::StudySpec;
pub use data::{ColumnRoles, Dataset, Role, Unit};
pub use error::{Error, Result};
pub use pairing::{pair_within_strata, Metric, PairSet};
pub use problem::{compile_problem, verify_solution, BalanceSpec, SelectionProblem, TargetProfile};
pub use solver::{branch_and_bound, MatchSolution, SolveStatus, SolverLimits};
