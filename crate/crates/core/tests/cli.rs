//! End-to-end runs of the `dtcollab` binary.

use std::path::Path;
use std::process::{Command, Output};

use dt_collab::experiment::CSV_COLUMNS;

fn dtcollab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dtcollab"))
        .args(args)
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .output()
        .unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("exp.toml");
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

const SMALL: &str = r#"
policy = ["one_time_greedy", "proposed"]
seeds = [3, 4]
sweep = [[1.0, 0.9]]
weight_energy = 0.002
train_task_count = 20
eval_task_count = 30
"#;

#[test]
fn validate_accepts_shipped_configs() {
    for name in ["quick", "task_rate_sweep", "edge_load_sweep", "ablations"] {
        let out = dtcollab(&["validate", "--config", &format!("configs/{name}.toml")]);
        assert!(out.status.success(), "{name}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok"));
    }
}

#[test]
fn validate_rejects_bad_configs() {
    let dir = tempfile::tempdir().unwrap();
    for body in [
        "seeds = []\n",
        "sweep = [[150.0, 0.9]]\n",
        "policy = \"best\"\n",
        "unknown_key = 1\n",
        "weight_energy = \"heavy\"\n",
    ] {
        let cfg = write_config(dir.path(), body);
        let out = dtcollab(&["validate", "--config", &cfg]);
        assert!(!out.status.success(), "accepted {body:?}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    }
    let out = dtcollab(&["validate", "--config", "does/not/exist.toml"]);
    assert!(!out.status.success());
}

#[test]
fn run_writes_one_row_per_policy_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let csv = dir.path().join("out.csv");
    let out = dtcollab(&["run", "--config", &cfg, "--out", csv.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], CSV_COLUMNS.join(","));
    assert_eq!(lines.len(), 1 + 4);
    assert!(lines[1].starts_with("proposed,") && lines[3].starts_with("one_time_greedy,"));
    for l in &lines[1..] {
        assert_eq!(l.split(',').count(), 12);
    }
}

#[test]
fn run_overrides_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let args = ["run", "--config", &cfg, "--seeds", "7,8,9", "--policy", "one_time_long_term", "--out", "-"];
    let a = dtcollab(&args);
    let b = dtcollab(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.starts_with("one_time_long_term,")));
    assert!(rows[2].contains(",9,"));
}

#[test]
fn run_rejects_an_unknown_policy_flag() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dtcollab(&["run", "--config", &cfg, "--policy", "random"]);
    assert!(!out.status.success());
}

#[test]
fn oracle_checks_an_instance() {
    let out = dtcollab(&["oracle", "--instance", "configs/toy_instance.toml"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.trim_end().ends_with("PASS"));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "exit_index = 7\n").unwrap();
    assert!(!dtcollab(&["oracle", "--instance", bad.to_str().unwrap()]).status.success());
}
