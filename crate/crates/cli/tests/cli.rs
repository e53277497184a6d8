use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join(name)
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_anesthesia-mpc"))
}

fn run(args: &[&str], patient: &Path, config: &Path) -> Output {
    let mut cmd = bin();
    cmd.args(args)
        .arg("--patient")
        .arg(patient)
        .arg("--config")
        .arg(config);
    cmd.output().unwrap()
}

/// Default controller file with some `key = value` lines replaced.
fn config_with(dir: &Path, edits: &[(&str, &str)]) -> PathBuf {
    let text = fs::read_to_string(data("controller_default.toml")).unwrap();
    let edited: Vec<String> = text
        .lines()
        .map(|line| {
            edits
                .iter()
                .find(|(k, _)| line.split('=').next().is_some_and(|lhs| lhs.trim() == *k))
                .map_or(line.to_string(), |(k, v)| format!("{k} = {v}"))
        })
        .collect();
    let path = dir.join("controller.toml");
    fs::write(&path, edited.join("\n")).unwrap();
    path
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn ingredients_writes_the_bundle() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("bundle");
    let o = run(
        &["ingredients", "--out", out.to_str().unwrap()],
        &data("patient_sample.toml"),
        &data("controller_default.toml"),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["K.txt", "P.txt", "X_a.txt", "D.txt", "manifest.toml"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
}

#[test]
fn simulate_is_deterministic_and_replayable() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let o = run(
            &["simulate", "--out", dir.to_str().unwrap(), "--svg"],
            &data("patient_sample.toml"),
            &data("controller_default.toml"),
        );
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let csv = fs::read(a.join("sim.csv")).unwrap();
    assert_eq!(csv, fs::read(b.join("sim.csv")).unwrap());
    assert_eq!(String::from_utf8_lossy(&csv).lines().count(), 121);
    assert!(fs::read_to_string(a.join("bis.svg"))
        .unwrap()
        .starts_with("<svg"));

    let manifest = fs::read_to_string(a.join("manifest.toml")).unwrap();
    let value: toml::Value = toml::from_str(&manifest).unwrap();
    assert_eq!(value["subcommand"].as_str(), Some("simulate"));
    assert_eq!(value["parameters"]["lambda"].as_float(), Some(0.99));

    let c = tmp.path().join("c");
    let o = bin()
        .args([
            "replay",
            a.join("manifest.toml").to_str().unwrap(),
            "--out",
            c.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(csv, fs::read(c.join("sim.csv")).unwrap());
}

#[test]
fn validate_passes_on_the_sample() {
    let tmp = TempDir::new().unwrap();
    let o = run(
        &["validate", "--out", tmp.path().to_str().unwrap()],
        &data("patient_sample.toml"),
        &data("controller_default.toml"),
    );
    assert_eq!(code(&o), 0);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("all 12 checks passed"), "{stdout}");
    assert!(tmp.path().join("validation.txt").is_file());
}

#[test]
fn validation_failure_exits_with_one() {
    // light sedation with almost no compensation margin forces clamping
    let tmp = TempDir::new().unwrap();
    let cfg = config_with(tmp.path(), &[("y_ref", "90"), ("m_bar", "[0.001, 0.001]")]);
    let o = run(&["validate"], &data("patient_sample.toml"), &cfg);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL  input_admissibility"));
}

#[test]
fn model_and_config_errors_exit_with_two() {
    let tmp = TempDir::new().unwrap();
    let cfg = config_with(tmp.path(), &[("lambda", "1.0")]);
    let o = run(&["steady-set"], &data("patient_sample.toml"), &cfg);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("lambda"));

    let bad_patient = tmp.path().join("patient.toml");
    let text = fs::read_to_string(data("patient_sample.toml")).unwrap();
    fs::write(&bad_patient, text.replacen("V1", "V0", 1)).unwrap();
    let o = run(
        &["steady-set"],
        &bad_patient,
        &data("controller_default.toml"),
    );
    assert_eq!(code(&o), 2);

    let o = run(
        &["steady-set"],
        &tmp.path().join("missing.toml"),
        &data("controller_default.toml"),
    );
    assert_eq!(code(&o), 2);
}

#[test]
fn infeasible_start_exits_with_three() {
    let tmp = TempDir::new().unwrap();
    let cfg = config_with(tmp.path(), &[("y_ref", "95"), ("m_bar", "[0.001, 0.001]")]);
    let o = run(
        &[
            "simulate",
            "--out",
            tmp.path().join("run").to_str().unwrap(),
        ],
        &data("patient_sample.toml"),
        &cfg,
    );
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("infeasible"));
}
