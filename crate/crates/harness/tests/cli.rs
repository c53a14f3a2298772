use std::path::Path;
use std::process::{Command, Output};

fn lazydagger(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lazydagger"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

const SMALL: &str = r#"{
  "algorithm": "safedagger",
  "offline_pairs": 300,
  "bc_pretrain_epochs": 1,
  "epochs": 2,
  "steps_per_epoch": 100,
  "test_rollouts": 3,
  "seeds": [1, 2],
  "training": {"policy": {"gradient_steps_per_epoch": 30}, "classifier": {"gradient_steps_per_epoch": 30}}
}"#;

#[test]
fn validate_echoes_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"algorithm": "lazydagger"}"#);
    let out = lazydagger(&["validate", "--config", &cfg]);
    assert!(out.status.success());
    let echoed: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(echoed["offline_pairs"], 4000);
    assert_eq!(echoed["thresholds"], "calibrate:0.2");
    assert_eq!(echoed["sigma2"], 0.05);
}

#[test]
fn validate_lists_every_problem() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "bad.json",
        r#"{"algorithm": "lazydagger-exec", "sigma2": 0.1, "thresholds": {"tau_sup": 0.1, "tau_auto": 0.3}}"#,
    );
    let out = lazydagger(&["validate", "--config", &cfg]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("sigma2:") && err.contains("thresholds.tau_auto:"), "{err}");
}

#[test]
fn run_then_compare() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", SMALL);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let res = lazydagger(&["run", "--config", &cfg, "--out", out.to_str().unwrap(), "--latency-grid", "0,1,4"]);
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    }
    let csv = std::fs::read_to_string(a.join("aggregate.csv")).unwrap();
    assert!(csv.starts_with("epoch,test_success_rate,mean_test_return,C_total,D_total,B_at_L0,B_at_L1,B_at_L4\n"));
    assert_eq!(csv, std::fs::read_to_string(b.join("aggregate.csv")).unwrap());

    let res = lazydagger(&["compare", a.to_str().unwrap(), b.to_str().unwrap()]);
    assert!(res.status.success());
    let cmp: serde_json::Value = serde_json::from_slice(&res.stdout).unwrap();
    assert_eq!(cmp["table"].as_array().unwrap().len(), 3);

    let single = dir.path().join("single");
    let res = lazydagger(&["run", "--config", &cfg, "--seed", "1", "--out", single.to_str().unwrap()]);
    assert!(res.status.success());
    let res = lazydagger(&["compare", a.to_str().unwrap(), single.to_str().unwrap()]);
    assert!(!res.status.success());
}

#[test]
fn calibrate_prints_thresholds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", SMALL);
    let out = lazydagger(&["calibrate", "--config", &cfg, "--seed", "5"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v[0]["seed"], 5);
    let frac = v[0]["thresholds"]["calibration"]["achieved_fraction"].as_f64().unwrap();
    assert!((frac - 0.2).abs() <= 0.02);
}

#[test]
fn missing_config_fails() {
    let out = lazydagger(&["run", "--config", "/nonexistent/config.json"]);
    assert!(!out.status.success());
}

#[test]
fn shipped_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let out = lazydagger(&["validate", "--config", path.to_str().unwrap()]);
        assert!(out.status.success(), "{}: {}", path.display(), String::from_utf8_lossy(&out.stderr));
        n += 1;
    }
    assert!(n >= 4);
}
