use std::path::Path;
use std::process::{Command, Output};

use cardmatch_core::synth::ScenarioConfig;

const BIN: &str = env!("CARGO_BIN_EXE_cardmatch");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn text(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).to_string() + &String::from_utf8_lossy(&out.stderr)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY_DATA: &str = "\
id,exposed,sex,age,score,outcome
t1,1,f,31,0.2,1
t2,1,m,45,0.9,0
t3,1,f,52,1.1,1
t4,1,m,38,0.4,0
c1,0,f,33,0.3,0
c2,0,m,44,0.8,0
c3,0,f,50,1.0,1
c4,0,m,40,0.5,0
c5,0,f,29,0.1,0
c6,0,m,47,1.2,0
c7,0,f,61,1.9,1
c8,0,m,36,0.6,0
";

const TINY_STUDY: &str = r#"{
  "covariates": { "balance": ["age", "score"], "exact": ["sex"], "tolerance": 0.2 },
  "target": { "source": "none" },
  "outcome": { "column": "outcome", "test": "mcnemar" }
}"#;

fn tiny_fixture(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let data = dir.join("data.csv");
    let study = dir.join("study.json");
    std::fs::write(&data, TINY_DATA).unwrap();
    std::fs::write(&study, TINY_STUDY).unwrap();
    (data, study)
}

#[test]
fn tiny_fixture_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let (data, study) = tiny_fixture(dir.path());
    let out = dir.path().join("run");
    let o = run(&["match", "--data", s(&data), "--config", s(&study), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    for name in ["pairs.csv", "balance.csv", "balance.json", "love.svg", "solve.log", "manifest.json"] {
        assert!(out.join(name).is_file(), "missing {name}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    let pairs_hash = manifest["outputs"]["pairs.csv"].as_str().unwrap();
    assert_eq!(pairs_hash, cardmatch_cli::sha256_file(&out.join("pairs.csv")).unwrap());
    assert!(!dir.path().join("run/.manifest.json.tmp").exists());

    let v = run(&["verify", "--data", s(&data), "--config", s(&study), "--pairs", s(&out.join("pairs.csv"))]);
    assert_eq!(v.status.code(), Some(0), "{}", text(&v));

    let a = run(&[
        "analyze", "--data", s(&data), "--pairs", s(&out.join("pairs.csv")), "--config", s(&study),
        "--out", s(&dir.path().join("analysis")),
    ]);
    assert_eq!(a.status.code(), Some(0), "{}", text(&a));
    assert!(text(&a).contains("mcnemar"));
    assert!(dir.path().join("analysis/outcome.json").is_file());
}

#[test]
fn missing_column_is_named_in_the_error() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = tiny_fixture(dir.path());
    let study = dir.path().join("bad.json");
    std::fs::write(&study, TINY_STUDY.replace("\"score\"", "\"income\"")).unwrap();
    let o = run(&["match", "--data", s(&data), "--config", s(&study), "--out", s(&dir.path().join("run"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o).contains("income"), "{}", text(&o));
}

#[test]
fn tiny_time_limit_exits_with_incumbent() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("scenario.json");
    std::fs::write(&scenario, serde_json::to_string(&ScenarioConfig::bench(20_000, 3)).unwrap()).unwrap();
    let sim = dir.path().join("sim");
    let o = run(&["simulate", "--config", s(&scenario), "--out", s(&sim)]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let out = dir.path().join("run");
    let o = run(&[
        "match", "--data", s(&sim.join("data.csv")), "--config", s(&sim.join("study.json")), "--out", s(&out),
        "--time-limit", "0.001",
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", text(&o));
    let sol: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("solution.json")).unwrap()).unwrap();
    assert!(sol["gap"].as_u64().unwrap() > 0);
    assert!(out.join("pairs.csv").is_file());
}

#[test]
fn simulated_files_load_into_match_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    let o = run(&["simulate", "--seed", "9", "--out", s(&sim)]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let out = dir.path().join("run");
    let o = run(&[
        "match", "--data", s(&sim.join("data.csv")), "--config", s(&sim.join("study.json")), "--out", s(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    assert!(text(&o).contains("pairs: 520"), "{}", text(&o));

    let b = run(&[
        "baseline", "--data", s(&sim.join("data.csv")), "--config", s(&sim.join("study.json")), "--out",
        s(&dir.path().join("psm")),
    ]);
    assert_eq!(b.status.code(), Some(0), "{}", text(&b));
    assert!(dir.path().join("psm/psm_pairs.csv").is_file());
    assert!(dir.path().join("psm/psm_balance.csv").is_file());
}

#[test]
fn analyze_reproduces_reference_p_value() {
    let o = run(&["analyze", "--counts", "25,10,197", "--test", "ztest"]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let out = text(&o);
    let line = out.lines().find(|l| l.starts_with("P-value")).unwrap();
    let p: f64 = line.split_whitespace().last().unwrap().parse().unwrap();
    assert!((p - 0.008).abs() < 0.001, "{p}");
}

#[test]
fn reruns_overwrite_identically() {
    let dir = tempfile::tempdir().unwrap();
    let (data, study) = tiny_fixture(dir.path());
    let out = dir.path().join("run");
    let args = ["match", "--data", s(&data), "--config", s(&study), "--out", s(&out)];
    assert_eq!(run(&args).status.code(), Some(0));
    let first = std::fs::read(out.join("balance.json")).unwrap();
    assert_eq!(run(&args).status.code(), Some(0));
    assert_eq!(first, std::fs::read(out.join("balance.json")).unwrap());
}

#[test]
fn invalid_arguments_exit_nonzero() {
    let o = run(&["analyze", "--counts", "1,2", "--test", "ztest"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o).contains("--counts"));
}
