use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hjb-lab"))
}

fn benchmark() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/benchmark.toml")
}

fn run(args: &[&str], out: &Path) -> Output {
    bin().args(args).arg("--out").arg(out).output().unwrap()
}

fn with_config(text: &str, dir: &Path) -> PathBuf {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    for f in ["tanh.csv", "neg_abs.csv"] {
        std::fs::copy(configs.join(f), dir.join(f)).unwrap();
    }
    let p = dir.join("run.toml");
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn default_suite_passes_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = benchmark();
    let mut reports = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("run{k}"));
        let o = run(&["--config", cfg.to_str().unwrap(), "--seed", "3", "verify", "--suite", "default"], &out);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
        let stdout = String::from_utf8(o.stdout).unwrap();
        assert!(stdout.lines().all(|l| l.starts_with("PASS ")), "{stdout}");
        reports.push(std::fs::read(out.join("verify_report.json")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
    let v: serde_json::Value = serde_json::from_slice(&reports[0]).unwrap();
    assert_eq!(v["suite"], "default");
    assert!(v["checks"].as_array().unwrap().iter().all(|c| c["paper_ref"].as_str().is_some_and(|s| !s.is_empty())));
}

#[test]
fn zero_slack_suite_fails_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with_config("[suite]\nchecks = [\"fpe.dissipation_heat\"]\nslack_override = 0.0\n", dir.path());
    let o = run(&["--config", cfg.to_str().unwrap(), "verify"], &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("FAIL fpe.dissipation_heat"));
}

#[test]
fn empty_suite_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with_config("[suite]\nchecks = []\n", dir.path());
    let o = run(&["--config", cfg.to_str().unwrap(), "verify"], &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn malformed_config_exits_4_with_key_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with_config("[grid]\nn = \"lots\"\n", dir.path());
    let o = run(&["--config", cfg.to_str().unwrap(), "transport"], &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("grid.n"));
    let cfg = with_config("[problem]\nterminal = \"linear:nowhere.csv\"\n", dir.path());
    let o = run(&["--config", cfg.to_str().unwrap(), "mfc"], &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("problem.terminal"));
    let o = bin().arg("frobnicate").output().unwrap();
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn unconverged_mfc_exits_3_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let text = "[grid]\nn = 512\n[problem]\nterminal = \"linear:tanh.csv\"\nrunning = \"mean:neg_abs.csv\"\nmax_iter = 1\n";
    let cfg = with_config(text, dir.path());
    let out = dir.path().join("out");
    let o = run(&["--config", cfg.to_str().unwrap(), "mfc"], &out);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("mfc.json")).unwrap()).unwrap();
    assert_eq!(summary["converged"], false);
    assert!(out.join("mfc_fields.csv").exists());
}

#[test]
fn artifacts_reload() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = benchmark();
    let out = dir.path().join("out");
    for cmd in ["transport", "functionals", "fpe"] {
        let o = run(&["--config", cfg.to_str().unwrap(), cmd], &out);
        assert_eq!(o.status.code(), Some(0), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let t: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("transport.json")).unwrap()).unwrap();
    assert!((t["report"]["d2"].as_f64().unwrap() - 1.0).abs() < 2e-3);
    let f: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("functionals.json")).unwrap()).unwrap();
    assert!(f["entropy"].as_f64().is_some());
    // Every snapshot in the path CSV is a probability density on the grid.
    let text = std::fs::read_to_string(out.join("fpe_path.csv")).unwrap();
    let mut by_time: std::collections::BTreeMap<String, f64> = Default::default();
    for line in text.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let d: f64 = cols[2].parse().unwrap();
        assert!(d >= 0.0);
        *by_time.entry(cols[0].to_string()).or_default() += d * 16.0 / 1024.0;
    }
    assert!(by_time.values().all(|m| (m - 1.0).abs() < 1e-8));
}
