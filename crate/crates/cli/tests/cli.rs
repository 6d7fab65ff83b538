//! End-to-end tests of the `alqr` binary.

use std::path::PathBuf;
use std::process::Command;

fn alqr() -> Command {
    Command::new(env!("CARGO_BIN_EXE_alqr"))
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("alqr_cli_{tag}_{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn run_subcommand_writes_csvs() {
    let dir = temp_dir("run");
    let out = dir.join("out");
    let config = dir.join("exp.toml");
    std::fs::write(
        &config,
        format!(
            r#"
[system]
preset = "paper"

[policy]
kind = "rce"

[run]
gamma = 1.4
horizon = 500
replicates = 2
base_seed = 1
output_dir = "{}"
emit_trajectory = true
"#,
            out.display()
        ),
    )
    .unwrap();
    let status = alqr().arg("run").arg(&config).status().unwrap();
    assert!(status.success());
    for name in ["regret.csv", "estimation.csv", "decomposition.csv", "summary.json", "plot.py"] {
        assert!(out.join(name).exists(), "{name} missing");
    }
    let regret = std::fs::read_to_string(out.join("regret.csv")).unwrap();
    assert!(regret.starts_with("replicate,n,regret,chi,rho,norm_regret,gce_norm_regret"));

    // The emitted trajectory + gains round-trip through the decompose
    // subcommand.
    let output = alqr()
        .arg("decompose")
        .arg("--trajectory")
        .arg(out.join("trajectory_rep0.csv"))
        .arg("--gains")
        .arg(out.join("gains_rep0.csv"))
        .arg("--preset")
        .arg("paper")
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let text = String::from_utf8_lossy(&output.stdout);
    assert!(text.contains("Z_n:"), "unexpected output: {text}");
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn run_respects_output_dir_override() {
    let dir = temp_dir("override");
    let out = dir.join("from_env");
    let config = dir.join("exp.toml");
    std::fs::write(
        &config,
        r#"
[system]
preset = "paper"

[policy]
kind = "optimal"

[run]
gamma = 2.0
horizon = 50
replicates = 1
base_seed = 1
output_dir = "ignored_by_env"
"#,
    )
    .unwrap();
    let status = alqr()
        .arg("run")
        .arg(&config)
        .env("ALQR_OUTPUT_DIR", &out)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out.join("regret.csv").exists());
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn decompose_without_gains_reports_missing_record() {
    let dir = temp_dir("nogains");
    let out = dir.join("out");
    let config = dir.join("exp.toml");
    std::fs::write(
        &config,
        format!(
            r#"
[system]
preset = "paper"

[policy]
kind = "optimal"

[run]
gamma = 2.0
horizon = 60
replicates = 1
base_seed = 2
output_dir = "{}"
emit_trajectory = true
"#,
            out.display()
        ),
    )
    .unwrap();
    assert!(alqr().arg("run").arg(&config).status().unwrap().success());
    let output = alqr()
        .arg("decompose")
        .arg("--trajectory")
        .arg(out.join("trajectory_rep0.csv"))
        .output()
        .unwrap();
    assert!(!output.status.success());
    let err = String::from_utf8_lossy(&output.stderr);
    assert!(err.contains("gain"), "unexpected error: {err}");
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn geometry_subcommand_emits_json_report() {
    let output = alqr().arg("geometry").arg("--preset").arg("paper").output().unwrap();
    assert!(output.status.success());
    let text = String::from_utf8_lossy(&output.stdout);
    let json: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(json["p0_dimension"], 0);
    assert_eq!(json["tangent_dimension"], 9);
    assert_eq!(json["unfalsifiable_random_hits"], 0);
}

#[test]
fn verify_fast_passes_and_injected_fault_fails() {
    let ok = alqr().arg("verify").arg("--level").arg("fast").output().unwrap();
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stdout));
    let text = String::from_utf8_lossy(&ok.stdout);
    assert!(text.contains("PASS  decomposition_identity"));

    let broken = alqr()
        .arg("verify")
        .arg("--level")
        .arg("fast")
        .arg("--inject")
        .arg("negate-t")
        .output()
        .unwrap();
    assert!(!broken.status.success());
    let text = String::from_utf8_lossy(&broken.stdout);
    assert!(text.contains("FAIL  decomposition_identity"), "fault not detected: {text}");
}
