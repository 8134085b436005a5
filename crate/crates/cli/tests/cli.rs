use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_pnorm-erm"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn pnorm-erm")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).trim().to_string()
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn realizable_bound_prints_exact_value() {
    let o = run(&[
        "bounds",
        "--theorem",
        "3",
        "--d",
        "2",
        "--rho",
        "0.5",
        "--n",
        "10",
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "0.01953125");
}

#[test]
fn bounds_json_carries_threshold() {
    let o = run(&[
        "bounds",
        "--theorem",
        "1",
        "--d",
        "5",
        "--n",
        "1000",
        "--v",
        "2",
        "--json",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!((v["bound_value"].as_f64().unwrap() - 16.0 * 2.0 / 100.0).abs() < 1e-12);
    assert!(v["threshold_n"].as_u64().unwrap() > 0);
}

#[test]
fn invalid_inputs_exit_with_config_code() {
    let o = run(&["bounds", "--theorem", "2", "--d", "2", "--n", "10"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["bounds", "--theorem", "4", "--d", "2", "--n", "10"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&[
        "bounds",
        "--theorem",
        "1",
        "--d",
        "2",
        "--n",
        "10",
        "--delta",
        "1.5",
    ]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["no-such-command"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_config_names_the_path() {
    let o = run(&["--config", "/definitely/not/here.json", "fit", "--p", "2"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("/definitely/not/here.json"), "{err}");
}

#[test]
fn config_for_another_command_is_rejected() {
    let cfg = configs_dir().join("excess_p2.json");
    let o = run(&["--config", cfg.to_str().unwrap(), "selftest", "--quick"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gen_data_then_fit_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = run(&[
        "--out", out, "--seed", "3", "gen-data", "--n", "40", "--d", "3",
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let data = dir.path().join("data.csv");
    let header = fs::read_to_string(&data).unwrap();
    assert!(header.starts_with("x1,x2,x3,y"));

    let o = run(&[
        "--out",
        out,
        "fit",
        "--data",
        data.to_str().unwrap(),
        "--p",
        "1.5",
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["weights"].as_array().unwrap().len(), 3);
    assert_eq!(v["converged"], true);
    assert!(dir.path().join("fit.json").exists());
}

#[test]
fn gen_data_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = run(&[
            "--out",
            d.path().to_str().unwrap(),
            "--seed",
            "9",
            "gen-data",
            "--n",
            "25",
        ]);
        assert_eq!(o.status.code(), Some(0));
    }
    let read = |d: &tempfile::TempDir| fs::read(d.path().join("data.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn selftest_quick_passes() {
    let o = run(&["--seed", "1", "selftest", "--quick"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["passed"], true);
    assert_eq!(v["suites"].as_array().unwrap().len(), 4);
}

#[test]
fn experiment_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs_dir().join("excess_p2.json");
    let o = run(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--workers",
        "2",
        "experiment",
        "--quick",
        "--n",
        "300",
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    for f in ["trials.csv", "summary.json", "rate.svg"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let csv = fs::read_to_string(dir.path().join("trials.csv")).unwrap();
    assert!(csv.starts_with("n,trial,excess_risk,grad_norm,recovered,seed"));
    assert_eq!(csv.lines().count(), 21);
}

#[test]
fn experiment_without_block_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"seed": 1}"#).unwrap();
    let o = run(&["--config", cfg.to_str().unwrap(), "experiment"]);
    assert_eq!(o.status.code(), Some(2));
    fs::write(&cfg, r#"{"seed": 1, "bogus": true}"#).unwrap();
    let o = run(&["--config", cfg.to_str().unwrap(), "experiment"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn shipped_configs_parse() {
    for entry in fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        let cfg = pnorm_erm_cli::config::RunConfig::load(&path).unwrap();
        cfg.experiment_config().unwrap().validate().unwrap();
    }
}
