use std::path::Path;
use std::process::{Command, Output};

fn mmpa(args: &[&str], seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mmpa"));
    cmd.args(args).env_remove("MMPA_SEED");
    if let Some(s) = seed {
        cmd.env("MMPA_SEED", s);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path, name: &str, extra: &str) -> String {
    let out = dir.join("out");
    let text = format!(
        r#"{{"name": "{name}", "trials": 2, "output_dir": {:?}, "site_profile": "site2", "scene": "B3"{extra}}}"#,
        out.to_str().unwrap()
    );
    let path = dir.join(format!("{name}.json"));
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn teach_then_ipe() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().to_str().unwrap();
    let out = stdout(&mmpa(&["teach", "--scene", "B3", "--task", "bench", "--store", store], None));
    assert!(out.contains("taught `bench`"), "{out}");
    assert!(dir.path().join("bench").join("task.json").is_file());

    let trace = dir.path().join("trace.json");
    let out = stdout(&mmpa(
        &["ipe", "--task", "bench", "--profile", "site1", "--scene", "B3", "--store", store, "--trace", trace.to_str().unwrap()],
        None,
    ));
    assert!(out.starts_with("flag=true"), "{out}");
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(trace).unwrap()).unwrap();
    assert!(json["iterations"].as_array().is_some_and(|a| !a.is_empty()));
}

#[test]
fn ipe_on_missing_task_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = mmpa(&["ipe", "--task", "nope", "--profile", "site1", "--store", dir.path().to_str().unwrap()], None);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope"));
}

#[test]
fn bad_alpha_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().to_str().unwrap();
    stdout(&mmpa(&["teach", "--scene", "B3", "--task", "t", "--store", store], None));
    for alpha in ["9", "0.1,0.2,0.3", "abc"] {
        let o = mmpa(&["ipe", "--task", "t", "--profile", "site1", "--scene", "B3", "--store", store, "--alpha", alpha], None);
        assert!(!o.status.success(), "alpha {alpha} accepted");
    }
}

#[test]
fn env_seed_overrides_config_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "e", r#", "seed": 5"#);
    let csv = dir.path().join("out").join("e.csv");

    stdout(&mmpa(&["experiment", "--config", &cfg], None));
    let from_config = std::fs::read(&csv).unwrap();
    stdout(&mmpa(&["experiment", "--config", &cfg], Some("5")));
    assert_eq!(std::fs::read(&csv).unwrap(), from_config);
    stdout(&mmpa(&["experiment", "--config", &cfg], Some("6")));
    assert_ne!(std::fs::read(&csv).unwrap(), from_config);
}

#[test]
fn experiment_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "abl", r#", "suite": {"kind": "beta_ablation", "betas": [1, 5]}"#);
    let out = stdout(&mmpa(&["experiment", "--config", &cfg], None));
    assert!(out.contains("beta1") && out.contains("beta5"), "{out}");
    let out_dir = dir.path().join("out");
    stdout(&mmpa(&["report", "--dir", out_dir.to_str().unwrap()], None));
    let report = std::fs::read_to_string(out_dir.join("report.md")).unwrap();
    assert!(report.contains("## abl"));
}

#[test]
fn unknown_config_field_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "x", r#", "trails": 3"#);
    let o = mmpa(&["experiment", "--config", &cfg], None);
    assert!(!o.status.success());
}
