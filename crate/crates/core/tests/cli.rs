use std::path::Path;
use std::process::{Command, Output};

use frppo_core::envs::EnvKind;
use frppo_core::fr_ppo::StepSize;
use frppo_core::harness::{Algorithm, RunConfig, CSV_HEADER};

fn frppo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_frppo"))
        .args(args)
        .output()
        .expect("spawn frppo")
}

fn path_arg(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

#[test]
fn run_writes_one_row_per_trial_and_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run.csv");
    let status = frppo(&[
        "run",
        "--env",
        "random",
        "--states",
        "6",
        "--actions",
        "3",
        "--iters",
        "15",
        "--trials",
        "3",
        "--seed",
        "4",
        "--out",
        path_arg(&out),
    ]);
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));

    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 45);
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(row.len(), 8);
        assert_eq!(row[0].parse::<usize>().unwrap(), i / 15);
        assert_eq!(row[1].parse::<usize>().unwrap(), i % 15 + 1);
        let improvement: f64 = row[3].parse().unwrap();
        let gap: f64 = row[6].parse().unwrap();
        assert!(improvement >= -1e-12 && gap >= -1e-12);
    }
}

#[test]
fn ppo_clip_run_reports_no_bound() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("clip.csv");
    let status = frppo(&[
        "run",
        "--algs",
        "ppo-clip",
        "--states",
        "4",
        "--iters",
        "5",
        "--out",
        path_arg(&out),
    ]);
    assert!(status.status.success());
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.lines().skip(1).all(|l| l.split(',').nth(5) == Some("NaN")));
}

#[test]
fn compare_writes_equal_length_series() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cmp.json");
    let status = frppo(&[
        "compare",
        "--env",
        "chain",
        "--states",
        "5",
        "--actions",
        "3",
        "--iters",
        "12",
        "--algs",
        "fr-ppo,kl-md,ppo-clip",
        "--out",
        path_arg(&out),
    ]);
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));

    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let algs = json["algorithms"].as_array().unwrap();
    let names: Vec<&str> = algs.iter().map(|a| a["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["fr-ppo", "kl-md", "ppo-clip"]);
    for alg in algs {
        let series = alg["series"].as_array().unwrap();
        assert_eq!(series.len(), 12);
        for (i, point) in series.iter().enumerate() {
            assert_eq!(point["iter"].as_u64().unwrap() as usize, i + 1);
            // one trial: the spread is zero
            assert_eq!(point["gap_iqr"].as_f64().unwrap(), 0.0);
            assert!(point["gap_median"].as_f64().unwrap() >= -1e-12);
        }
    }
    assert_eq!(json["env"]["kind"], "chain");
}

#[test]
fn compare_needs_two_algorithms() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cmp.json");
    let status = frppo(&["compare", "--algs", "fr-ppo", "--iters", "3", "--out", path_arg(&out)]);
    assert!(!status.status.success());
}

#[test]
fn verify_passes_and_rejects_unknown_suites() {
    let ok = frppo(&["verify", "bounds", "5"]);
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stdout));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("lower_bounds"));

    let zero = frppo(&["verify", "geometry", "0"]);
    assert!(zero.status.success());

    let bad = frppo(&["verify", "nonsense"]);
    assert!(!bad.status.success());
}

#[test]
fn invalid_environment_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.csv");
    let status = frppo(&["run", "--env", "grid", "--states", "5", "--out", path_arg(&out)]);
    assert!(!status.status.success());
    assert!(String::from_utf8_lossy(&status.stderr).starts_with("error:"));
    assert!(!out.exists());
}

#[test]
fn config_file_is_loaded_and_flags_override_it() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("config.json");
    let out = dir.path().join("from_config.csv");
    let mut config = RunConfig::default();
    config.env.kind = EnvKind::Grid;
    config.env.n_states = 9;
    config.env.n_actions = 4;
    config.solver.tau = StepSize::Explicit(0.05);
    config.solver.max_iters = 7;
    config.algorithm = Algorithm::KlMd;
    config.output_path = out.clone();
    std::fs::write(&config_path, config.to_json().unwrap()).unwrap();

    let reloaded = RunConfig::load(&config_path).unwrap();
    assert_eq!(reloaded.solver.tau, StepSize::Explicit(0.05));
    assert_eq!(reloaded.algorithm, Algorithm::KlMd);

    let status = frppo(&["run", "--config", path_arg(&config_path), "--iters", "4"]);
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 5);
}

#[test]
fn partial_json_config_fills_defaults() {
    let config =
        RunConfig::from_json(r#"{"env": {"kind": "chain", "n_actions": 3}, "solver": {"tau": "auto"}}"#).unwrap();
    assert_eq!(config.env.kind, EnvKind::Chain);
    assert_eq!(config.env.n_states, RunConfig::default().env.n_states);
    assert_eq!(config.solver.tau, StepSize::Auto);
    assert_eq!(config.trials, 1);
}
