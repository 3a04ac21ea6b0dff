//! End-to-end checks of the binary: exit codes, output schemas, determinism,
//! and the config round-trip through embedded reports.

use std::path::Path;
use std::process::Command;

fn seedbank() -> Command {
    Command::new(env!("CARGO_BIN_EXE_seedbank"))
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

const QUICK_DUALITY: &str = r#"
[measure]
kind = "discrete"
atoms = [[1.0, 1.0]]
[init]
x = 0.3
y = 0.3
[sim]
dt = 0.001
t_max = 0.2
reps = 2000
seed = 11
[duality]
target_se = 0.01
"#;

#[test]
fn unknown_subcommand_is_usage_error() {
    let out = seedbank().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_config_is_usage_error_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"
        [measure]
        kind = "discrete"
        atoms = [[1.0, -1.0]]
        "#,
    );
    let out = seedbank()
        .args(["forward", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("measure.atoms[0].mass"), "stderr: {stderr}");
}

#[test]
fn forward_from_all_ones_writes_constant_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"
        [measure]
        kind = "discrete"
        atoms = [[0.5, 1.0], [2.0, 1.0]]
        [init]
        x = 1.0
        y = 1.0
        [sim]
        dt = 0.01
        t_max = 0.5
        seed = 3
        "#,
    );
    let out = seedbank()
        .args(["forward", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("forward_path.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "t,x,y_1,y_2");
    for line in lines {
        for col in line.split(',').skip(1) {
            assert_eq!(col.parse::<f64>().unwrap(), 1.0, "row: {line}");
        }
    }
}

#[test]
fn duality_check_is_deterministic_and_passes() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let cfg = write_config(dir_a.path(), QUICK_DUALITY);
    for dir in [&dir_a, &dir_b] {
        let out = seedbank()
            .args(["duality-check", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(dir.path())
            .output()
            .unwrap();
        assert_eq!(
            out.status.code(),
            Some(0),
            "stderr: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let a = std::fs::read(dir_a.path().join("duality_report.json")).unwrap();
    let b = std::fs::read(dir_b.path().join("duality_report.json")).unwrap();
    assert_eq!(a, b, "same config and seed must give identical bytes");
}

#[test]
fn report_embeds_config_that_reproduces_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), QUICK_DUALITY);
    let out = seedbank()
        .args(["duality-check", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("duality_report.json")).unwrap(),
    )
    .unwrap();

    // Re-serialize the embedded config as TOML and run again from it.
    let embedded = &report["config"];
    let toml_text = toml::to_string(embedded).unwrap();
    let dir2 = tempfile::tempdir().unwrap();
    let cfg2 = write_config(dir2.path(), &toml_text);
    let out2 = seedbank()
        .args(["duality-check", "--config"])
        .arg(&cfg2)
        .arg("--out")
        .arg(dir2.path())
        .output()
        .unwrap();
    assert_eq!(out2.status.code(), Some(0));
    let again = std::fs::read(dir2.path().join("duality_report.json")).unwrap();
    let first = std::fs::read(dir.path().join("duality_report.json")).unwrap();
    assert_eq!(first, again);
}

#[test]
fn seed_override_changes_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), QUICK_DUALITY);
    let base = seedbank()
        .args(["duality-check", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(base.status.code(), Some(0));
    let first: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("duality_report.json")).unwrap(),
    )
    .unwrap();
    let out = seedbank()
        .args(["duality-check", "--seed", "999", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let second: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("duality_report.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(second["seed"].as_u64(), Some(999));
    assert_ne!(first["config_hash"], second["config_hash"]);
}

#[test]
fn wf_and_sve_and_dual_artifacts_have_expected_shape() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"
        [measure]
        kind = "discrete"
        atoms = [[1.0, 1.0]]
        [init]
        x = 0.5
        y = 0.5
        [sim]
        dt = 0.01
        t_max = 0.5
        reps = 50
        seed = 5
        record_stride = 10
        [wf]
        N = 100
        [coalescent]
        sample_size = 4
        "#,
    );
    for cmd in ["wf", "sve", "dual", "coalescent"] {
        let out = seedbank()
            .args([cmd, "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(dir.path())
            .output()
            .unwrap();
        assert_eq!(
            out.status.code(),
            Some(0),
            "{cmd} stderr: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let wf = std::fs::read_to_string(dir.path().join("wf_ensemble.csv")).unwrap();
    assert!(wf.starts_with("t,mean_x,var_x,se_x\n"));

    let sve = std::fs::read_to_string(dir.path().join("sve_ensemble.csv")).unwrap();
    assert!(sve.starts_with("t,mean_x,var_x,se_x\n"));

    let events = std::fs::read_to_string(dir.path().join("dual_events.csv")).unwrap();
    assert!(events.starts_with("time,event_kind,detail\n"));

    let partition: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("coalescent_final.json")).unwrap(),
    )
    .unwrap();
    assert!(partition["blocks"].is_array());
    assert!(partition["flags"].is_array());
    let ids: Vec<u64> = partition["blocks"]
        .as_array()
        .unwrap()
        .iter()
        .flat_map(|b| b.as_array().unwrap().iter().map(|v| v.as_u64().unwrap()))
        .collect();
    let mut sorted = ids.clone();
    sorted.sort_unstable();
    assert_eq!(sorted, vec![1, 2, 3, 4]);
}

#[test]
fn scaling_check_passes_on_small_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"
        [measure]
        kind = "discrete"
        atoms = [[1.0, 1.0]]
        [init]
        x = 0.5
        y = 0.5
        [sim]
        t_max = 0.5
        seed = 13
        [wf]
        N = 200
        reps = 2000
        [scaling]
        tolerance = 0.05
        "#,
    );
    let out = seedbank()
        .args(["scaling-check", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("scaling_report.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report["pass"], serde_json::Value::Bool(true));
}
