use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use irl_core::env::{EnvSpec, GridWorldSpec};
use serde_json::Value;
use tempfile::TempDir;

fn irl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_irl")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes a 4×4 grid spec, materializes it and samples demonstrations.
fn materialized(dir: &TempDir) -> (PathBuf, PathBuf) {
    let spec = dir.path().join("spec.json");
    let text = serde_json::to_string(&EnvSpec::Gridworld(GridWorldSpec::open(4, 4, (3, 3)))).unwrap();
    std::fs::write(&spec, text).unwrap();
    let mdp = dir.path().join("mdp.json");
    let demos = dir.path().join("demos.json");
    let out = irl(&[
        "env", "--spec", path_str(&spec), "--out", path_str(&mdp), "--count", "3", "--demos", path_str(&demos), "--seed", "5",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    (mdp, demos)
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn env_writes_features_and_demonstrations() {
    let dir = TempDir::new().unwrap();
    let (mdp, demos) = materialized(&dir);
    let doc = irl_core::MdpDocument::load(&mdp).unwrap();
    assert_eq!(doc.mdp.n_states(), 16);
    assert_eq!(doc.features.as_ref().map(Vec::len), Some(16));
    assert!(irl_core::ObservationFile::load(&demos).is_ok());
}

#[test]
fn solvers_run_on_materialized_inputs() {
    let dir = TempDir::new().unwrap();
    let (mdp, demos) = materialized(&dir);
    for solver in ["cpirl", "gpirl", "lirl"] {
        let out_path = dir.path().join(format!("{solver}.json"));
        let out = irl(&[solver, "--mdp", path_str(&mdp), "--obs", path_str(&demos), "--out", path_str(&out_path)]);
        assert_eq!(code(&out), 0, "{solver}: {}", String::from_utf8_lossy(&out.stderr));
        let value = read_json(&out_path);
        let reward = value["reward"].as_array().unwrap_or_else(|| panic!("{solver}: {value}"));
        assert!(!reward.is_empty() && reward.iter().all(|x| x.as_f64().is_some_and(f64::is_finite)));
    }
    let gp = read_json(&dir.path().join("gpirl.json"));
    assert_eq!(gp["reward"].as_array().unwrap().len(), 16 * 5);
    assert!(gp["log_evidence"].as_f64().is_some());
}

#[test]
fn solver_prints_to_stdout_without_out() {
    let dir = TempDir::new().unwrap();
    let (mdp, demos) = materialized(&dir);
    let out = irl(&["cpirl", "--mdp", path_str(&mdp), "--obs", path_str(&demos)]);
    assert_eq!(code(&out), 0);
    let value: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(value["reward"].as_array().unwrap().len(), 16);
}

#[test]
fn cpirl_accepts_separate_prior_files() {
    let dir = TempDir::new().unwrap();
    let (mdp, demos) = materialized(&dir);
    let mean = dir.path().join("mean.json");
    std::fs::write(&mean, serde_json::to_string(&vec![0.1; 16]).unwrap()).unwrap();
    let out = irl(&[
        "cpirl", "--mdp", path_str(&mdp), "--obs", path_str(&demos), "--prior-mean", path_str(&mean), "--rmin", "-2", "--rmax", "2",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let value: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(value["reward"].as_array().unwrap().iter().all(|x| x.as_f64().unwrap().abs() <= 2.0));
    assert!(value["kkt_residual"].as_f64().is_some() && value["iterations"].as_u64().is_some());

    std::fs::write(&mean, "[0.0, 0.0]").unwrap();
    let out = irl(&["cpirl", "--mdp", path_str(&mdp), "--obs", path_str(&demos), "--prior-mean", path_str(&mean)]);
    assert_eq!(code(&out), 2);
}

#[test]
fn missing_inputs_exit_with_two() {
    let dir = TempDir::new().unwrap();
    let (mdp, _) = materialized(&dir);
    let missing = dir.path().join("nope.json");
    let out = irl(&["lirl", "--mdp", path_str(&mdp), "--obs", path_str(&missing)]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.json"));
    let out = irl(&["env", "--spec", path_str(&missing)]);
    assert_eq!(code(&out), 2);
}

#[test]
fn bench_accuracy_writes_results_and_aggregate() {
    let dir = TempDir::new().unwrap();
    let config = dir.path().join("config.json");
    let csv = dir.path().join("results.csv");
    std::fs::write(
        &config,
        r#"{
            "env": {"kind": "random_gridworld", "width": 5, "height": 5},
            "algorithms": ["lirl", "cpirl", "true_reward"],
            "trajectory_counts": [1, 2],
            "evaluation_episodes": 10,
            "seeds": [0, 1]
        }"#,
    )
    .unwrap();
    let out = irl(&["bench", "accuracy", "--config", path_str(&config), "--out", path_str(&csv)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rows = irl_bench::read_results(std::fs::File::open(&csv).unwrap()).unwrap();
    assert_eq!(rows.len(), 2 * 2 * 3);
    assert!(csv.with_extension("plot.csv").exists());

    let again = dir.path().join("again.csv");
    assert_eq!(code(&irl(&["bench", "accuracy", "--config", path_str(&config), "--out", path_str(&again)])), 0);
    assert_eq!(std::fs::read(&csv).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn bad_configs_exit_with_two() {
    let dir = TempDir::new().unwrap();
    let config = dir.path().join("config.json");
    for text in [
        "{",
        r#"{"env": {"kind": "random_gridworld", "width": 5, "height": 5}, "algorithms": ["lirl"]}"#,
        r#"{"env": {"kind": "random_gridworld", "width": 5, "height": 5}, "algorithms": ["magic"], "seeds": [0]}"#,
    ] {
        std::fs::write(&config, text).unwrap();
        let out = irl(&["bench", "accuracy", "--config", path_str(&config)]);
        assert_eq!(code(&out), 2, "{text}: {}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(code(&irl(&["bench", "timing", "--config", path_str(&dir.path().join("absent.json"))])), 2);
}

#[test]
fn failed_cells_exit_with_one_and_are_recorded() {
    let dir = TempDir::new().unwrap();
    let config = dir.path().join("config.json");
    let csv = dir.path().join("results.csv");
    std::fs::write(
        &config,
        r#"{
            "env": {"kind": "random_gridworld", "width": 2, "height": 2, "obstacle_density": 0.9},
            "algorithms": ["lirl"],
            "trajectory_counts": [1],
            "seeds": [0]
        }"#,
    )
    .unwrap();
    let out = irl(&["bench", "accuracy", "--config", path_str(&config), "--out", path_str(&csv)]);
    assert_eq!(code(&out), 1, "{}", String::from_utf8_lossy(&out.stderr));
    let failures = std::fs::read_to_string(csv.with_extension("failures.csv")).unwrap();
    assert_eq!(failures.lines().count(), 2);
}
