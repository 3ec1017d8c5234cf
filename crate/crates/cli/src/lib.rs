//! Subcommands of the `cardmatch` binary.
//!
//! Every command writes its artifacts under `--out` and finishes with a
//! `manifest.json` holding input and output hashes. Timestamps live only in
//! the manifest, so the other artifacts are byte-identical across reruns.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cardmatch_core::config::{StudySpec, TargetSourceKind};
use cardmatch_core::diagnostics::balance_report;
use cardmatch_core::outcome::{analyze_pairs, two_proportion_ztest, OutcomeReport, TestKind};
use cardmatch_core::pairing::{Metric, PairSet};
use cardmatch_core::pipeline::{run_match, MatchRun};
use cardmatch_core::problem::{compile_problem, target_from_spec, verify_solution, BalanceSpec};
use cardmatch_core::psm::{fit_logistic_propensity, greedy_nn_match, GreedyOptions, DEFAULT_CALIPER};
use cardmatch_core::solver::{MatchSolution, SolveStatus};
use cardmatch_core::synth::{generate_scenario, run_benchmark, write_bench_csv, ScenarioConfig};
use cardmatch_core::Dataset;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_TIME_LIMIT: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "cardmatch", version, about = "Cardinality matching for observational studies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Select the largest balanced matched sample, pair it, and report balance.
    Match(MatchArgs),
    /// Test an outcome on the pairs of a previous `match` run.
    Analyze(AnalyzeArgs),
    /// Greedy propensity-score matching for comparison.
    Baseline(BaselineArgs),
    /// Generate a synthetic study (data.csv and study.json).
    Simulate(SimulateArgs),
    /// Time end-to-end matching on synthetic instances of several sizes.
    Bench(BenchArgs),
    /// Re-check a pairs file against the balance constraints of a study.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    /// Data file (CSV with `id` and `exposed` columns).
    #[arg(long)]
    pub data: PathBuf,
    /// Study config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Group-balance tolerance in SD units for every covariate.
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Target-balance tolerance in SD units for every covariate.
    #[arg(long)]
    pub target_tolerance: Option<f64>,
    /// Target profile source.
    #[arg(long, value_parser = ["none", "treated", "full"])]
    pub target: Option<String>,
    /// Drop the exposed-versus-unexposed balance rows.
    #[arg(long)]
    pub no_group_balance: bool,
    /// Categorical columns to expand into indicator balance covariates.
    #[arg(long, value_delimiter = ',')]
    pub one_hot: Vec<String>,
}

impl StudyArgs {
    /// Config with command-line overrides applied, and the dataset it describes.
    pub fn load(&self) -> Result<(StudySpec, Dataset)> {
        let mut spec = StudySpec::from_file(&self.config)
            .with_context(|| format!("loading config {}", self.config.display()))?;
        if let Some(t) = self.tolerance {
            spec.covariates.tolerance = t;
        }
        if let Some(t) = self.target_tolerance {
            spec.target.tolerance = t;
        }
        if let Some(t) = &self.target {
            spec.target.source = match t.as_str() {
                "treated" => TargetSourceKind::Treated,
                "full" => TargetSourceKind::Full,
                _ => TargetSourceKind::None,
            };
        }
        if self.no_group_balance {
            spec.covariates.group_balance = false;
        }
        for col in &self.one_hot {
            if !spec.covariates.one_hot.contains(col) {
                spec.covariates.one_hot.push(col.clone());
            }
        }
        spec.validate()?;
        let dataset = Dataset::load_csv(&self.data, &spec.column_roles())
            .with_context(|| format!("loading data {}", self.data.display()))?;
        Ok((spec, dataset))
    }
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    #[command(flatten)]
    pub study: StudyArgs,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub time_limit: Option<f64>,
    #[arg(long)]
    pub gap_abs: Option<f64>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub min_pairs: Option<usize>,
    /// Pairing distance (l1 or l2).
    #[arg(long)]
    pub metric: Option<Metric>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Data file holding the outcome column.
    #[arg(long, requires = "pairs")]
    pub data: Option<PathBuf>,
    /// `pairs.csv` from a `match` run.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// Study config; supplies column roles and test defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Outcome column name.
    #[arg(long)]
    pub outcome: Option<String>,
    #[arg(long)]
    pub test: Option<TestKind>,
    #[arg(long)]
    pub continuity_correction: bool,
    /// Marginal counts `events_exposed,events_unexposed,pairs` instead of pair data (z-test only).
    #[arg(long, conflicts_with_all = ["data", "pairs"])]
    pub counts: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[command(flatten)]
    pub study: StudyArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Caliper in SD of the logit score.
    #[arg(long, default_value_t = DEFAULT_CALIPER)]
    pub caliper: f64,
    #[arg(long)]
    pub no_caliper: bool,
    /// Only pair units within the same exact-match stratum.
    #[arg(long)]
    pub respect_strata: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario config (JSON); defaults apply to missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Comma-separated unit counts.
    #[arg(long, value_delimiter = ',', default_value = "1000,10000,100000")]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 600.0)]
    pub time_limit: f64,
    #[arg(long, default_value_t = 0.0)]
    pub gap_abs: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub study: StudyArgs,
    /// `pairs.csv` to check.
    #[arg(long)]
    pub pairs: PathBuf,
}

pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Match(a) => cmd_match(&a),
        Command::Analyze(a) => cmd_analyze(&a),
        Command::Baseline(a) => cmd_baseline(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Bench(a) => cmd_bench(&a),
        Command::Verify(a) => cmd_verify(&a),
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub tool_version: String,
    pub config_hash: Option<String>,
    pub inputs: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub started_at: String,
    pub finished_at: String,
    /// Output file name to sha256.
    pub outputs: BTreeMap<String, String>,
}

struct ManifestBuilder {
    subcommand: &'static str,
    config: Option<PathBuf>,
    inputs: Vec<PathBuf>,
    seed: Option<u64>,
    started_at: String,
}

impl ManifestBuilder {
    fn new(subcommand: &'static str) -> Self {
        ManifestBuilder {
            subcommand,
            config: None,
            inputs: Vec::new(),
            seed: None,
            started_at: chrono::Utc::now().to_rfc3339(),
        }
    }

    /// Hashes inputs and outputs and writes `manifest.json` through a temporary file.
    fn write(self, out: &Path, outputs: &[&str]) -> Result<()> {
        let mut inputs = BTreeMap::new();
        for p in self.inputs.iter().chain(&self.config) {
            inputs.insert(p.display().to_string(), sha256_file(p)?);
        }
        let mut hashes = BTreeMap::new();
        for name in outputs {
            hashes.insert(name.to_string(), sha256_file(&out.join(name))?);
        }
        let manifest = RunManifest {
            subcommand: self.subcommand.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: self.config.as_deref().map(sha256_file).transpose()?,
            inputs,
            seed: self.seed,
            started_at: self.started_at,
            finished_at: chrono::Utc::now().to_rfc3339(),
            outputs: hashes,
        };
        let tmp = out.join(".manifest.json.tmp");
        fs::write(&tmp, serde_json::to_string_pretty(&manifest)? + "\n")
            .with_context(|| format!("writing {}", tmp.display()))?;
        fs::rename(&tmp, out.join("manifest.json")).context("finalizing manifest.json")?;
        Ok(())
    }
}

fn create_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating output directory {}", out.display()))
}

fn exit_code(status: SolveStatus) -> i32 {
    match status {
        SolveStatus::TimeLimit => EXIT_TIME_LIMIT,
        SolveStatus::Optimal | SolveStatus::WithinGap => EXIT_OK,
    }
}

fn solve_log(run: &MatchRun) -> String {
    let s = &run.solution;
    let mut text = s.log.join("\n");
    text.push('\n');
    text.push_str(&format!(
        "verification: {} ({} rows checked)\n",
        if run.feasibility.pass { "pass" } else { "FAIL" },
        run.feasibility.rows.len()
    ));
    for st in &s.per_stratum {
        text.push_str(&format!("stratum {}: {} pairs\n", st.label, st.treated));
    }
    text.push_str(&format!(
        "pairing: total distance {:.9} ({:?}), {:.3}s\n",
        run.pairs.total_distance, run.pairs.metric, run.pair_s
    ));
    text
}

pub fn cmd_match(args: &MatchArgs) -> Result<i32> {
    let mut manifest = ManifestBuilder::new("match");
    let (mut spec, dataset) = args.study.load()?;
    if let Some(v) = args.time_limit {
        spec.solver.time_limit_s = v;
    }
    if let Some(v) = args.gap_abs {
        spec.solver.gap_abs = v;
    }
    if let Some(v) = args.threads {
        spec.solver.threads = v;
    }
    if let Some(v) = args.seed {
        spec.solver.seed = v;
    }
    if let Some(v) = args.min_pairs {
        spec.solver.min_pairs = Some(v);
    }
    if let Some(m) = args.metric {
        spec.pairing.metric = m;
    }
    spec.validate()?;
    create_out(&args.out)?;
    log::info!(
        "{} units ({} exposed), {} balance covariates, {} strata",
        dataset.units.len(),
        dataset.n_treated(),
        dataset.n_balance(),
        dataset.strata.len()
    );
    let run = run_match(&dataset, &spec)?;
    let out = &args.out;
    run.pairs.write_csv(out.join("pairs.csv"))?;
    run.balance.write_csv(out.join("balance.csv"))?;
    run.balance.write_json(out.join("balance.json"))?;
    run.balance.write_love_plot(out.join("love.svg"))?;
    fs::write(out.join("solve.log"), solve_log(&run)).context("writing solve.log")?;
    fs::write(
        out.join("solution.json"),
        serde_json::to_string_pretty(&run.solution)? + "\n",
    )
    .context("writing solution.json")?;
    manifest.inputs.push(args.study.data.clone());
    manifest.config = Some(args.study.config.clone());
    manifest.seed = Some(spec.solver.seed);
    manifest.write(
        out,
        &["pairs.csv", "balance.csv", "balance.json", "love.svg", "solve.log", "solution.json"],
    )?;
    let s = &run.solution;
    println!(
        "pairs: {}  bound: {}  gap: {}  status: {:?}  exposed retained: {}/{}",
        s.n,
        s.bound,
        s.gap,
        s.status,
        s.n,
        dataset.n_treated()
    );
    if let Some(m) = run.balance.max_abs_smd_after() {
        println!("max |SMD| after matching: {m:.4}");
    }
    Ok(exit_code(s.status))
}

fn parse_counts(s: &str) -> Result<(u64, u64, u64)> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let [a, b, n] = parts.as_slice() else {
        bail!("--counts expects three comma-separated integers, got '{s}'");
    };
    let num = |v: &str| v.parse::<u64>().with_context(|| format!("invalid count '{v}'"));
    Ok((num(a)?, num(b)?, num(n)?))
}

/// Per-pair `(exposed, unexposed)` outcomes in pairs-file order.
pub fn pair_outcomes(dataset: &Dataset, pairs: &[(String, String)]) -> Result<Vec<(f64, f64)>> {
    let index: BTreeMap<&str, usize> = dataset
        .units
        .iter()
        .enumerate()
        .map(|(i, u)| (u.id.as_str(), i))
        .collect();
    pairs
        .iter()
        .map(|(t, c)| {
            let get = |id: &str| -> Result<f64> {
                let i = *index.get(id).with_context(|| format!("pair references unknown unit '{id}'"))?;
                dataset.units[i]
                    .outcome
                    .with_context(|| format!("unit '{id}' has no outcome value"))
            };
            Ok((get(t)?, get(c)?))
        })
        .collect()
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<i32> {
    let spec = match &args.config {
        Some(p) => StudySpec::from_file(p).with_context(|| format!("loading config {}", p.display()))?,
        None => StudySpec::default(),
    };
    let test = args.test.unwrap_or(spec.outcome.test);
    let cc = args.continuity_correction || spec.outcome.continuity_correction;
    let report: OutcomeReport = if let Some(c) = &args.counts {
        if test != TestKind::ZTest {
            bail!("--counts only supports --test ztest");
        }
        let (a, b, n) = parse_counts(c)?;
        two_proportion_ztest(a, b, n, cc)?
    } else {
        let (Some(data), Some(pairs)) = (&args.data, &args.pairs) else {
            bail!("analyze needs --data and --pairs, or --counts");
        };
        let mut roles = spec.column_roles();
        if let Some(o) = &args.outcome {
            roles.outcome = Some(o.clone());
        }
        let dataset = Dataset::load_csv(data, &roles).with_context(|| format!("loading data {}", data.display()))?;
        let ids = PairSet::read_id_pairs(pairs)?;
        analyze_pairs(&pair_outcomes(&dataset, &ids)?, test, cc)?
    };
    print!("{}", report.table());
    if let Some(out) = &args.out {
        create_out(out)?;
        let mut manifest = ManifestBuilder::new("analyze");
        manifest.inputs.extend(args.data.iter().cloned());
        manifest.inputs.extend(args.pairs.iter().cloned());
        manifest.config = args.config.clone();
        fs::write(out.join("outcome.json"), serde_json::to_string_pretty(&report)? + "\n")
            .context("writing outcome.json")?;
        manifest.write(out, &["outcome.json"])?;
    }
    Ok(EXIT_OK)
}

pub fn cmd_baseline(args: &BaselineArgs) -> Result<i32> {
    let mut manifest = ManifestBuilder::new("baseline");
    let (spec, dataset) = args.study.load()?;
    create_out(&args.out)?;
    let model = fit_logistic_propensity(&dataset)?;
    let opts = GreedyOptions {
        caliper: (!args.no_caliper).then_some(args.caliper),
        respect_strata: args.respect_strata,
    };
    let greedy = greedy_nn_match(&dataset, &model, &opts);
    let target = target_from_spec(&spec, &dataset)?;
    let balance_spec = BalanceSpec::from_study(&spec, &dataset, target.is_some())?;
    let report = balance_report(
        &dataset,
        &greedy.treated_ids(&dataset),
        &greedy.control_ids(&dataset),
        None,
        target.as_ref(),
    )?;
    greedy.write_pairs_csv(&dataset, args.out.join("psm_pairs.csv"))?;
    report.write_csv(args.out.join("psm_balance.csv"))?;
    fs::write(args.out.join("psm_model.json"), serde_json::to_string_pretty(&PsmSummary::new(&model, &greedy))? + "\n")
        .context("writing psm_model.json")?;
    manifest.inputs.push(args.study.data.clone());
    manifest.config = Some(args.study.config.clone());
    manifest.write(&args.out, &["psm_pairs.csv", "psm_balance.csv", "psm_model.json"])?;
    let outside = balance_spec
        .group_tolerance
        .as_ref()
        .map(|tol| {
            report
                .covariates
                .iter()
                .zip(tol)
                .filter(|(c, t)| c.after.as_ref().is_some_and(|a| a.smd.abs() > **t))
                .count()
        })
        .unwrap_or(0);
    println!(
        "greedy propensity matching: {} pairs, {} exposed excluded of {}{}",
        greedy.pairs.len(),
        greedy.excluded.len(),
        dataset.n_treated(),
        if model.separation { " (separation: scores diverged)" } else { "" }
    );
    if let Some(m) = report.max_abs_smd_after() {
        println!("max |SMD| after matching: {m:.4} ({outside} covariates outside the study tolerance)");
    }
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct PsmSummary<'a> {
    coefficients: &'a [f64],
    covariates: &'a [String],
    iterations: usize,
    gradient_norm: f64,
    converged: bool,
    separation: bool,
    caliper_width: Option<f64>,
    pairs: usize,
    excluded_exposed: usize,
}

impl<'a> PsmSummary<'a> {
    fn new(m: &'a cardmatch_core::psm::PropensityModel, g: &cardmatch_core::psm::GreedyMatch) -> Self {
        PsmSummary {
            coefficients: &m.coefficients,
            covariates: &m.covariates,
            iterations: m.iterations,
            gradient_norm: m.gradient_norm,
            converged: m.converged,
            separation: m.separation,
            caliper_width: g.caliper_width,
            pairs: g.pairs.len(),
            excluded_exposed: g.excluded.len(),
        }
    }
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<i32> {
    let mut cfg = match &args.config {
        Some(p) => ScenarioConfig::from_file(p).with_context(|| format!("loading scenario {}", p.display()))?,
        None => ScenarioConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    create_out(&args.out)?;
    let synth = generate_scenario(&cfg)?;
    synth.write_csv(args.out.join("data.csv"))?;
    let mut spec = synth.study_spec();
    spec.target.path = None;
    fs::write(args.out.join("study.json"), spec.to_json_pretty() + "\n").context("writing study.json")?;
    fs::write(
        args.out.join("scenario.json"),
        serde_json::to_string_pretty(&cfg)? + "\n",
    )
    .context("writing scenario.json")?;
    let mut manifest = ManifestBuilder::new("simulate");
    manifest.config = args.config.clone();
    manifest.seed = Some(cfg.seed);
    manifest.write(&args.out, &["data.csv", "study.json", "scenario.json"])?;
    let exposed = synth.units.iter().filter(|u| u.exposed == 1).count();
    println!(
        "wrote {} units ({} exposed) to {}",
        synth.units.len(),
        exposed,
        args.out.join("data.csv").display()
    );
    Ok(EXIT_OK)
}

pub fn cmd_bench(args: &BenchArgs) -> Result<i32> {
    create_out(&args.out)?;
    let mut study = StudySpec::default();
    study.solver.time_limit_s = args.time_limit;
    study.solver.gap_abs = args.gap_abs;
    let rows = run_benchmark(&args.sizes, args.seed, &study)?;
    let file = fs::File::create(args.out.join("bench.csv")).context("creating bench.csv")?;
    write_bench_csv(&rows, file)?;
    for r in &rows {
        println!(
            "{:>8} units: n = {:>6} bound = {:>6} {:?} total {:.2}s (solve {:.2}s, pair {:.2}s)",
            r.n_units, r.n_pairs, r.bound, r.status, r.total_s, r.solve_s, r.pair_s
        );
    }
    let mut manifest = ManifestBuilder::new("bench");
    manifest.seed = Some(args.seed);
    manifest.write(&args.out, &["bench.csv"])?;
    Ok(if rows.iter().any(|r| r.time_limit_hit) {
        EXIT_TIME_LIMIT
    } else {
        EXIT_OK
    })
}

pub fn cmd_verify(args: &VerifyArgs) -> Result<i32> {
    let (spec, dataset) = args.study.load()?;
    let target = target_from_spec(&spec, &dataset)?;
    let balance_spec = BalanceSpec::from_study(&spec, &dataset, target.is_some())?;
    let problem = compile_problem(&dataset, &balance_spec, target.as_ref())?;
    let ids = PairSet::read_id_pairs(&args.pairs)?;
    let mut solution = MatchSolution::from_selection(&problem, vec![false; problem.n_vars()]);
    solution.treated_ids = ids.iter().map(|p| p.0.clone()).collect();
    solution.control_ids = ids.iter().map(|p| p.1.clone()).collect();
    let report = verify_solution(&problem, &solution);
    for issue in &report.issues {
        println!("issue: {issue}");
    }
    for row in report.violations() {
        println!(
            "violated: {} activity {:.9} rhs {:.9} slack {:.3e}",
            row.name, row.activity, row.rhs, row.slack
        );
    }
    println!(
        "{}: {} pairs, {} rows checked",
        if report.pass { "PASS" } else { "FAIL" },
        ids.len(),
        report.rows.len()
    );
    Ok(if report.pass { EXIT_OK } else { EXIT_ERROR })
}
