//! Synthetic studies: a neighborhood-exposure scenario with nested
//! individuals, scaled benchmark instances, and small random instances for
//! oracle comparisons.
//!
//! Every entity type draws from its own ChaCha8 stream of the seed, so adding
//! a covariate to one entity type never shifts the draws of another.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::config::{StudySpec, TargetSourceKind};
use crate::data::{Dataset, UnitRecord};
use crate::error::{Error, Result};
use crate::outcome::TestKind;
use crate::pipeline::run_match;
use crate::solver::SolveStatus;

const STREAM_NEIGHBORHOODS: u64 = 1;
const STREAM_INDIVIDUALS: u64 = 2;
const STREAM_OUTCOMES: u64 = 3;

pub const BALANCE_COLUMNS: [&str; 5] = [
    "female",
    "education_years",
    "nbhd_school",
    "nbhd_clinic",
    "nbhd_dist_km",
];
pub const EXACT_COLUMNS: [&str; 2] = ["age_cat", "ethnicity"];
pub const NEIGHBORHOOD_COLUMN: &str = "neighborhood";
pub const YOUNG: &str = "lt11";
pub const OLD: &str = "ge11";
pub const ETHNICITIES: [&str; 4] = ["brahmin_chhetri", "dalit", "janajati", "newar"];
const ETHNICITY_WEIGHTS: [f64; 4] = [0.45, 0.12, 0.30, 0.13];

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Shifts applied to exposed neighborhoods and their residents. Kept mild so
/// the unexposed pool can match every exposed unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EffectSizes {
    pub school_prob_shift: f64,
    pub clinic_prob_shift: f64,
    pub log_distance_shift: f64,
    pub education_shift: f64,
    pub female_prob_shift: f64,
}

impl Default for EffectSizes {
    fn default() -> Self {
        EffectSizes {
            school_prob_shift: -0.10,
            clinic_prob_shift: 0.05,
            log_distance_shift: 0.15,
            education_shift: -0.40,
            female_prob_shift: 0.0,
        }
    }
}

/// Outcome risk per exposure and age group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RiskParameters {
    pub young_exposed: f64,
    pub young_unexposed: f64,
    pub old_exposed: f64,
    pub old_unexposed: f64,
}

impl Default for RiskParameters {
    fn default() -> Self {
        RiskParameters {
            young_exposed: 0.1269,
            young_unexposed: 0.0508,
            old_exposed: 0.0774,
            old_unexposed: 0.0681,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n_neighborhoods: usize,
    pub n_exposed_neighborhoods: usize,
    pub n_exposed_individuals: usize,
    pub n_young_exposed: usize,
    /// Unexposed individuals per exposed individual.
    pub unexposed_factor: usize,
    pub effects: EffectSizes,
    pub risks: RiskParameters,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            n_neighborhoods: 151,
            n_exposed_neighborhoods: 15,
            n_exposed_individuals: 520,
            n_young_exposed: 197,
            unexposed_factor: 4,
            effects: EffectSizes::default(),
            risks: RiskParameters::default(),
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ScenarioConfig = serde_json::from_str(&text).map_err(|e| Error::Syntax {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidConfig(m));
        if self.n_exposed_individuals == 0 {
            return fail("n_exposed_individuals must be positive".into());
        }
        if self.n_young_exposed > self.n_exposed_individuals {
            return fail(format!(
                "n_young_exposed ({}) exceeds n_exposed_individuals ({})",
                self.n_young_exposed, self.n_exposed_individuals
            ));
        }
        if self.n_exposed_neighborhoods == 0 || self.n_exposed_neighborhoods >= self.n_neighborhoods {
            return fail(format!(
                "need 1 <= n_exposed_neighborhoods < n_neighborhoods, got {} of {}",
                self.n_exposed_neighborhoods, self.n_neighborhoods
            ));
        }
        if self.unexposed_factor == 0 {
            return fail("unexposed_factor must be positive".into());
        }
        let r = &self.risks;
        for (name, v) in [
            ("young_exposed", r.young_exposed),
            ("young_unexposed", r.young_unexposed),
            ("old_exposed", r.old_exposed),
            ("old_unexposed", r.old_unexposed),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return fail(format!("risk {name} = {v} is outside [0, 1]"));
            }
        }
        Ok(())
    }

    /// Scenario with `n_units` individuals, one fifth exposed.
    pub fn bench(n_units: usize, seed: u64) -> Self {
        let base = ScenarioConfig::default();
        let n_exposed = (n_units / 5).max(1);
        let n_neighborhoods = base.n_neighborhoods.max(n_units / 17);
        ScenarioConfig {
            n_neighborhoods,
            n_exposed_neighborhoods: base.n_exposed_neighborhoods.max(n_neighborhoods / 10),
            n_exposed_individuals: n_exposed,
            n_young_exposed: ((n_exposed * base.n_young_exposed) as f64 / base.n_exposed_individuals as f64)
                .round() as usize,
            seed,
            ..base
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticUnit {
    pub id: String,
    pub exposed: u8,
    pub neighborhood: String,
    pub age_cat: String,
    pub ethnicity: String,
    pub female: u8,
    pub education_years: u32,
    pub nbhd_school: u8,
    pub nbhd_clinic: u8,
    pub nbhd_dist_km: f64,
    pub outcome: u8,
}

impl SyntheticUnit {
    fn balance_values(&self) -> Vec<f64> {
        vec![
            self.female as f64,
            self.education_years as f64,
            self.nbhd_school as f64,
            self.nbhd_clinic as f64,
            self.nbhd_dist_km,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticStudy {
    pub config: ScenarioConfig,
    pub units: Vec<SyntheticUnit>,
}

struct Neighborhood {
    exposed: bool,
    school: bool,
    clinic: bool,
    dist_km: f64,
}

fn bernoulli(rng: &mut ChaCha8Rng, p: f64) -> bool {
    rng.random::<f64>() < p.clamp(0.0, 1.0)
}

fn weighted(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

/// Draws the scenario. Exposure is a neighborhood property inherited by residents.
pub fn generate_scenario(config: &ScenarioConfig) -> Result<SyntheticStudy> {
    config.validate()?;
    let fx = &config.effects;

    let mut rng = stream(config.seed, STREAM_NEIGHBORHOODS);
    let mut order: Vec<usize> = (0..config.n_neighborhoods).collect();
    order.shuffle(&mut rng);
    let mut is_exposed = vec![false; config.n_neighborhoods];
    for &h in &order[..config.n_exposed_neighborhoods] {
        is_exposed[h] = true;
    }
    let neighborhoods: Vec<Neighborhood> = is_exposed
        .iter()
        .map(|&exposed| {
            let e = if exposed { 1.0 } else { 0.0 };
            let school = bernoulli(&mut rng, 0.6 + e * fx.school_prob_shift);
            let clinic = bernoulli(&mut rng, 0.35 + e * fx.clinic_prob_shift);
            let dist = LogNormal::new(5.0f64.ln() + e * fx.log_distance_shift, 0.5)
                .expect("valid parameters")
                .sample(&mut rng);
            Neighborhood {
                exposed,
                school,
                clinic,
                dist_km: (dist * 100.0).round() / 100.0,
            }
        })
        .collect();
    let exposed_nbhds: Vec<usize> = (0..config.n_neighborhoods).filter(|&h| is_exposed[h]).collect();
    let unexposed_nbhds: Vec<usize> = (0..config.n_neighborhoods).filter(|&h| !is_exposed[h]).collect();

    let n_exposed = config.n_exposed_individuals;
    let n_unexposed = n_exposed * config.unexposed_factor;
    let young_share = config.n_young_exposed as f64 / n_exposed as f64;
    let n_young_unexposed = (n_unexposed as f64 * young_share).round() as usize;

    let mut rng = stream(config.seed, STREAM_INDIVIDUALS);
    let mut units = Vec::with_capacity(n_exposed + n_unexposed);
    for (exposed, count, n_young, pool) in [
        (true, n_exposed, config.n_young_exposed, &exposed_nbhds),
        (false, n_unexposed, n_young_unexposed, &unexposed_nbhds),
    ] {
        let mut young: Vec<bool> = (0..count).map(|i| i < n_young).collect();
        young.shuffle(&mut rng);
        let e = if exposed { 1.0 } else { 0.0 };
        let education = Normal::new(6.0 + e * fx.education_shift, 3.0).expect("valid parameters");
        for is_young in young {
            let h = pool[rng.random_range(0..pool.len())];
            let nb = &neighborhoods[h];
            debug_assert_eq!(nb.exposed, exposed);
            let female = bernoulli(&mut rng, 0.49 + e * fx.female_prob_shift);
            let years = education.sample(&mut rng).round().clamp(0.0, 16.0) as u32;
            let ethnicity = ETHNICITIES[weighted(&mut rng, &ETHNICITY_WEIGHTS)];
            units.push(SyntheticUnit {
                id: format!("p{:06}", units.len() + 1),
                exposed: exposed as u8,
                neighborhood: format!("nb{:04}", h + 1),
                age_cat: if is_young { YOUNG } else { OLD }.to_string(),
                ethnicity: ethnicity.to_string(),
                female: female as u8,
                education_years: years,
                nbhd_school: nb.school as u8,
                nbhd_clinic: nb.clinic as u8,
                nbhd_dist_km: nb.dist_km,
                outcome: 0,
            });
        }
    }

    // Exactly round(risk * size) events per exposure-by-age cell.
    let mut rng = stream(config.seed, STREAM_OUTCOMES);
    let r = &config.risks;
    for (exposed, age, risk) in [
        (1u8, YOUNG, r.young_exposed),
        (1, OLD, r.old_exposed),
        (0, YOUNG, r.young_unexposed),
        (0, OLD, r.old_unexposed),
    ] {
        let mut cell: Vec<usize> = (0..units.len())
            .filter(|&i| units[i].exposed == exposed && units[i].age_cat == age)
            .collect();
        let events = (risk * cell.len() as f64).round() as usize;
        cell.shuffle(&mut rng);
        for &i in &cell[..events] {
            units[i].outcome = 1;
        }
    }
    Ok(SyntheticStudy {
        config: config.clone(),
        units,
    })
}

impl SyntheticStudy {
    pub fn write_csv_to<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for u in &self.units {
            w.serialize(u)?;
        }
        w.flush().map_err(|e| Error::io("data.csv", e))?;
        Ok(())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv_to(std::io::BufWriter::new(file))
    }

    /// Study definition matching the generated columns: exact on age and
    /// ethnicity, balance toward the exposed sample at 0.1 SD.
    pub fn study_spec(&self) -> StudySpec {
        let mut spec = StudySpec::default();
        spec.covariates.balance = BALANCE_COLUMNS.iter().map(|s| s.to_string()).collect();
        spec.covariates.exact = EXACT_COLUMNS.iter().map(|s| s.to_string()).collect();
        spec.covariates.ignore = vec![NEIGHBORHOOD_COLUMN.to_string()];
        spec.target.source = TargetSourceKind::Treated;
        spec.outcome.column = Some("outcome".to_string());
        spec.outcome.test = TestKind::ZTest;
        spec.solver.seed = self.config.seed;
        spec
    }

    pub fn to_dataset(&self) -> Result<Dataset> {
        let records = self
            .units
            .iter()
            .map(|u| UnitRecord {
                id: u.id.clone(),
                exposed: u.exposed == 1,
                raw: u.balance_values(),
                exact_keys: vec![u.age_cat.clone(), u.ethnicity.clone()],
                outcome: Some(u.outcome as f64),
            })
            .collect();
        Dataset::from_records(
            records,
            BALANCE_COLUMNS.iter().map(|s| s.to_string()).collect(),
            EXACT_COLUMNS.iter().map(|s| s.to_string()).collect(),
        )
    }
}

/// Shape of the small instances used against the enumeration oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomInstanceOptions {
    pub max_treated: usize,
    pub max_control: usize,
    pub n_covariates: usize,
    pub max_strata: usize,
    /// Mean shift of the exposed units on every covariate, in SD units.
    pub shift: f64,
}

impl Default for RandomInstanceOptions {
    fn default() -> Self {
        RandomInstanceOptions {
            max_treated: 12,
            max_control: 12,
            n_covariates: 2,
            max_strata: 3,
            shift: 0.5,
        }
    }
}

/// Small random stratified instance; at least one stratum can form a pair.
pub fn random_instance(seed: u64, opts: &RandomInstanceOptions) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_t = rng.random_range(2..=opts.max_treated.max(2));
    let n_c = rng.random_range(2..=opts.max_control.max(2));
    let n_strata = rng.random_range(1..=opts.max_strata.max(1));
    let normal = Normal::new(0.0, 1.0).expect("valid parameters");
    let strata: Vec<usize> = loop {
        let s: Vec<usize> = (0..n_t + n_c).map(|_| rng.random_range(0..n_strata)).collect();
        let pairable = (0..n_strata).any(|k| s[..n_t].contains(&k) && s[n_t..].contains(&k));
        if pairable {
            break s;
        }
    };
    let records = (0..n_t + n_c)
        .map(|i| {
            let exposed = i < n_t;
            let raw = (0..opts.n_covariates)
                .map(|_| normal.sample(&mut rng) + if exposed { opts.shift } else { 0.0 })
                .collect();
            UnitRecord {
                id: format!("{}{:02}", if exposed { "t" } else { "c" }, i),
                exposed,
                raw,
                exact_keys: vec![format!("s{}", strata[i])],
                outcome: None,
            }
        })
        .collect();
    let names = (0..opts.n_covariates).map(|k| format!("x{}", k + 1)).collect();
    Dataset::from_records(records, names, vec!["stratum".into()]).expect("continuous draws are not constant")
}

/// One tight exposed cluster plus a few exposed outliers beyond every
/// unexposed unit on `x`; unexposed units cover [-1, 4] evenly.
pub fn outlier_instance(seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("valid parameters");
    let mut records = Vec::new();
    for i in 0..23 {
        let x = if i < 20 {
            2.0 + 0.3 * normal.sample(&mut rng)
        } else {
            6.0 + 0.2 * normal.sample(&mut rng)
        };
        records.push(UnitRecord {
            id: format!("t{i:03}"),
            exposed: true,
            raw: vec![x, normal.sample(&mut rng)],
            exact_keys: vec![],
            outcome: None,
        });
    }
    for k in 0..80 {
        records.push(UnitRecord {
            id: format!("c{k:03}"),
            exposed: false,
            raw: vec![-1.0 + 5.0 * k as f64 / 79.0, normal.sample(&mut rng)],
            exact_keys: vec![],
            outcome: None,
        });
    }
    Dataset::from_records(records, vec!["x".into(), "z".into()], vec![]).expect("valid instance")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub n_units: usize,
    pub n_exposed: usize,
    pub n_pairs: usize,
    pub bound: usize,
    pub gap: usize,
    pub status: SolveStatus,
    pub time_limit_hit: bool,
    pub retention: f64,
    pub generate_s: f64,
    pub solve_s: f64,
    pub pair_s: f64,
    pub total_s: f64,
}

/// End-to-end match and pair for each size, run sequentially.
pub fn run_benchmark(sizes: &[usize], seed: u64, study: &StudySpec) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let start = Instant::now();
        let synth = generate_scenario(&ScenarioConfig::bench(size, seed))?;
        let dataset = synth.to_dataset()?;
        let generate_s = start.elapsed().as_secs_f64();
        let mut spec = synth.study_spec();
        spec.solver = study.solver.clone();
        spec.covariates.tolerance = study.covariates.tolerance;
        spec.target.tolerance = study.target.tolerance;
        spec.pairing = study.pairing.clone();
        let run = run_match(&dataset, &spec)?;
        let s = &run.solution;
        log::info!("bench size {size}: n = {} bound = {} status {:?}", s.n, s.bound, s.status);
        rows.push(BenchRow {
            n_units: dataset.units.len(),
            n_exposed: dataset.n_treated(),
            n_pairs: s.n,
            bound: s.bound,
            gap: s.gap,
            status: s.status,
            time_limit_hit: s.status == SolveStatus::TimeLimit,
            retention: s.n as f64 / dataset.n_treated() as f64,
            generate_s,
            solve_s: run.solve_s,
            pair_s: run.pair_s,
            total_s: start.elapsed().as_secs_f64(),
        });
    }
    Ok(rows)
}

pub fn write_bench_csv<W: std::io::Write>(rows: &[BenchRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("bench.csv", e))?;
    Ok(())
}
