use std::path::Path;
use std::process::Command;

use multispin_cli::config::{Mutation, QGrid};
use multispin_cli::verify::{run_suite, Status};
use multispin_cli::{run, CommandKind, ExperimentConfig, RunOptions};
use serde_json::Value;

fn config(text: &str) -> ExperimentConfig {
    ExperimentConfig::from_json_str(text, "test").unwrap()
}

fn options(dir: &Path, workers: usize) -> RunOptions {
    RunOptions { out: dir.to_path_buf(), workers, seed: None }
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const FAST_SAMPLER: &str = r#""sampler": {"burn_in": 100, "sweeps": 1000, "thin": 2}"#;

#[test]
fn verify_passes_on_defaults_and_empty_mixture() {
    let report = run_suite(&ExperimentConfig::default());
    assert!(report.passed, "{:#?}", report.failures());
    let empty = config(
        r#"{"schema": "multispin.config.v1",
            "model": {"layout": {"species": ["a", "b"], "sizes": [3, 2]},
                      "mixture": {"species": ["a", "b"], "terms": []}}}"#,
    );
    let report = run_suite(&empty);
    assert!(report.passed, "{:#?}", report.failures());
}

#[test]
fn mutation_fixture_is_caught_on_the_shifted_identity() {
    let mut c = ExperimentConfig::default();
    c.verify.mutation = Some(Mutation::ShiftedCoefficients);
    let report = run_suite(&c);
    assert!(!report.passed);
    let failed: Vec<&str> = report.failures().iter().map(|f| f.name.as_str()).collect();
    assert_eq!(failed, ["mixture.shifted-identity"]);
    // Every other check still ran.
    assert_eq!(report.checks.iter().filter(|c| c.status == Status::Pass).count(), report.checks.len() - 1);
}

#[test]
fn free_energy_at_zero_beta_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(r#"{"schema": "multispin.config.v1", "free_energy": {"settings": {"beta_grid": [0.0]}, "instances": 3}}"#);
    let out = run(CommandKind::FreeEnergy, &c, &options(dir.path(), 1)).unwrap();
    let doc = read_json(&out.files[1]);
    assert_eq!(doc["summary"]["mean"], 0.0);
    let csv = std::fs::read_to_string(&out.files[0]).unwrap();
    assert!(csv.starts_with("instance,seed,value,std_error,estimator,flags\n"));
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn free_energy_compares_against_enumeration() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(&format!(
        r#"{{"schema": "multispin.config.v1",
            "model": {{"layout": {{"species": ["a", "b"], "sizes": [1, 1]}},
                      "mixture": {{"species": ["a", "b"], "terms": [{{"p": [1, 1], "delta_sq": 1.0}}]}}}},
            "free_energy": {{"compare": "enumeration", "instances": 2,
                            "settings": {{"beta_grid": [0, 0.25, 0.5, 0.75, 1], {FAST_SAMPLER}}}}}}}"#
    ));
    let out = run(CommandKind::FreeEnergy, &c, &options(dir.path(), 1)).unwrap();
    let doc = read_json(&out.files[1]);
    for row in doc["rows"].as_array().unwrap() {
        let a = row["estimate"]["value"].as_f64().unwrap();
        let b = row["compare"]["value"].as_f64().unwrap();
        let se = row["estimate"]["std_error"].as_f64().unwrap();
        assert!((a - b).abs() <= 4.0 * se + 1e-3, "{a} vs {b} (se {se})");
    }
}

#[test]
fn ground_state_matches_eigen_oracle_column() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(
        r#"{"schema": "multispin.config.v1",
            "ground_state": {"instances": 3, "oracle": true, "settings": {"restarts": 8}}}"#,
    );
    let out = run(CommandKind::GroundState, &c, &options(dir.path(), 1)).unwrap();
    let doc = read_json(&out.files[1]);
    for row in doc["rows"].as_array().unwrap() {
        assert!(row["relative_difference"].as_f64().unwrap() <= 1e-6, "{row}");
    }
    assert!(std::fs::read_to_string(&out.files[0]).unwrap().lines().next().unwrap().ends_with("oracle,relative_difference"));
}

fn corner_tap_config() -> ExperimentConfig {
    let mut c = config(
        r#"{"schema": "multispin.config.v1",
            "model": {"layout": {"species": ["a", "b"], "sizes": [1, 1]},
                      "mixture": {"species": ["a", "b"], "terms": [{"p": [1, 1], "delta_sq": 1.0}]}},
            "tap_scan": {"estimator": "enumeration", "solver": "exhaustive",
                         "estimator_settings": {"beta_grid": [0.0, 1.0]}}}"#,
    );
    c.tap_scan.grid = QGrid::Product { lo: 0.0, hi: 0.8, points: 3 };
    c
}

#[test]
fn tap_scan_writes_gap_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(CommandKind::TapScan, &corner_tap_config(), &options(dir.path(), 1)).unwrap();
    let csv = std::fs::read_to_string(&out.files[0]).unwrap();
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    assert_eq!(&header[..3], ["q_a", "q_b", "lhs"]);
    assert!(header.contains(&"gap") && header.contains(&"gap_se"));
    assert_eq!(csv.lines().count(), 10);
    let doc = read_json(&out.files[1]);
    assert_eq!(doc["schema"], "multispin.tap-scan.v1");
    assert_eq!(doc["seeds"].as_array().unwrap().len(), 20);
    assert_eq!(doc["summary"]["violations"], 0);
}

#[test]
fn multisamp_reports_both_orderings() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(&format!(
        r#"{{"schema": "multispin.config.v1",
            "multisamp": {{"instances": 2, "eps": [0.3, 2.5],
                          "settings": {{"beta_grid": [0, 0.5, 1], {FAST_SAMPLER}}}}}}}"#
    ));
    let out = run(CommandKind::Multisamp, &c, &options(dir.path(), 1)).unwrap();
    let doc = read_json(&out.files[1]);
    let summary = doc["summary"].as_array().unwrap();
    assert_eq!(summary.len(), 2);
    assert_eq!(summary[1]["mean_of_log"], 0.0);
    assert!(summary[0]["mean_of_log"].as_f64().unwrap() <= summary[0]["log_of_mean"].as_f64().unwrap() + 1e-12);
}

fn file_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn outputs_do_not_depend_on_worker_count() {
    let c = config(&format!(
        r#"{{"schema": "multispin.config.v1", "master_seed": 42,
            "free_energy": {{"instances": 4, "settings": {{"beta_grid": [0, 0.5, 1], {FAST_SAMPLER}}}}}}}"#
    ));
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run(CommandKind::FreeEnergy, &c, &options(a.path(), 1)).unwrap();
    run(CommandKind::FreeEnergy, &c, &options(b.path(), 4)).unwrap();
    assert_eq!(file_bytes(a.path()), file_bytes(b.path()));
}

#[test]
fn seed_flag_overrides_config() {
    let c = config(r#"{"schema": "multispin.config.v1", "master_seed": 1, "ground_state": {"instances": 1, "settings": {"restarts": 2}}}"#);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let opts = RunOptions { seed: Some(9), ..options(b.path(), 1) };
    run(CommandKind::GroundState, &c, &options(a.path(), 1)).unwrap();
    run(CommandKind::GroundState, &c, &opts).unwrap();
    let seed_a = read_json(&a.path().join("ground_state.json"))["master_seed"].clone();
    let seed_b = read_json(&b.path().join("ground_state.json"))["master_seed"].clone();
    assert_eq!((seed_a, seed_b), (Value::from(1), Value::from(9)));
}

#[test]
fn config_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let c = corner_tap_config();
    let path = dir.path().join("c.json");
    std::fs::write(&path, c.to_json_pretty()).unwrap();
    let back = ExperimentConfig::load(&path).unwrap();
    assert_eq!(back, c);
}

#[test]
fn binary_exit_codes_and_diagnostics() {
    let bin = env!("CARGO_BIN_EXE_multispin");
    let dir = tempfile::tempdir().unwrap();

    let ok = Command::new(bin).args(["verify", "--out"]).arg(dir.path()).output().unwrap();
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stdout));
    assert!(dir.path().join("verify.json").exists());

    let mutant = dir.path().join("mutant.json");
    std::fs::write(&mutant, r#"{"schema": "multispin.config.v1", "verify": {"mutation": "shifted-coefficients"}}"#).unwrap();
    let bad = Command::new(bin).args(["verify", "--config"]).arg(&mutant).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(bad.status.code(), Some(1));

    let broken = dir.path().join("broken.json");
    std::fs::write(&broken, "{\n  \"schema\": \"multispin.config.v1\",\n  \"free_energy\": {\"instances\": -1}\n}\n").unwrap();
    let err = Command::new(bin).args(["free-energy", "--config"]).arg(&broken).output().unwrap();
    assert_eq!(err.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&err.stderr);
    assert!(msg.contains("free_energy.instances") && msg.contains("line 3"), "{msg}");
}
