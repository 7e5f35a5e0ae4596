use std::path::{Path, PathBuf};
use std::process::Command;

use edgeswarm::cli::{main_with, EXIT_INVALID, EXIT_INVARIANT, EXIT_IO, EXIT_OK};

fn scenario(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.toml"))
        .display()
        .to_string()
}

fn call(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = main_with(std::iter::once("edgeswarm").chain(args.iter().copied()), &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn files_in(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

#[test]
fn validate_accepts_shipped_scenario() {
    let (code, out, _) = call(&["validate", "--config", &scenario("failover")]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(out.trim(), "failover: ok");
}

#[test]
fn validate_rejects_two_orchestrators() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(
        &path,
        r#"name = "two-heads"
[[agents]]
id = "a"
role = "orchestrator"
[[agents]]
id = "b"
role = "orchestrator"
"#,
    )
    .unwrap();
    let (code, _, err) = call(&["validate", "--config", path.to_str().unwrap()]);
    assert_eq!(code, EXIT_INVALID, "{err}");
    assert!(err.contains("exactly one orchestrator required, found 2"), "{err}");

    let (code, out, _) = call(&["--format", "machine", "validate", "--config", path.to_str().unwrap()]);
    assert_eq!(code, EXIT_INVALID);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["valid"], false);
}

#[test]
fn unknown_keys_and_bad_flags_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("typo.toml");
    std::fs::write(&path, "name = \"x\"\nsede = 4\n").unwrap();
    assert_eq!(call(&["validate", "--config", path.to_str().unwrap()]).0, EXIT_INVALID);
    assert_eq!(call(&["run", "--posture", "paranoid"]).0, EXIT_INVALID);
    assert_eq!(call(&["no-such-command"]).0, EXIT_INVALID);
}

#[test]
fn missing_config_file_is_io_error() {
    let (code, _, err) = call(&["run", "--config", "/nonexistent/scenario.toml"]);
    assert_eq!(code, EXIT_IO, "{err}");
    let (code, _, _) = call(&["report", "/nonexistent/report.json"]);
    assert_eq!(code, EXIT_IO);
}

#[test]
fn nothing_is_written_without_out() {
    let dir = tempfile::tempdir().unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_edgeswarm"));
    child
        .current_dir(dir.path())
        .env_remove("EDGESWARM_OUT")
        .args(["attack-suite", "--config", &scenario("baseline-attack-suite")]);
    let out = child.output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("Spoofed sender"));
    assert!(files_in(dir.path()).is_empty());
}

#[test]
fn out_from_environment_writes_artifacts_and_report_rerenders() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_edgeswarm"))
        .env("EDGESWARM_OUT", dir.path())
        .args(["failover-bench", "--config", &scenario("failover")])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let names: Vec<String> = files_in(dir.path())
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    for expected in ["manifest.json", "report.json", "report.txt", "trace.jsonl"] {
        assert!(names.iter().any(|n| n == expected), "{expected} missing from {names:?}");
    }

    let (code, table, _) = call(&["report", dir.path().to_str().unwrap()]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(table, std::fs::read_to_string(dir.path().join("report.txt")).unwrap());
}

#[test]
fn tampered_report_is_an_invariant_violation() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    assert_eq!(call(&["failover-bench", "--config", &scenario("failover"), "--out", d]).0, EXIT_OK);
    let path = dir.path().join("report.json");
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let total = &mut v["failover"]["decomposition"]["total_blackout_us"];
    *total = serde_json::json!(total.as_u64().unwrap() + 1);
    std::fs::write(&path, v.to_string()).unwrap();
    let (code, _, err) = call(&["report", path.to_str().unwrap()]);
    assert_eq!(code, EXIT_INVARIANT, "{err}");
}

#[test]
fn seed_override_changes_output_and_machine_format_is_json() {
    let a = call(&["--format", "machine", "latency-bench", "--config", &scenario("latency")]);
    let b = call(&["--format", "machine", "latency-bench", "--config", &scenario("latency"), "--seed", "77"]);
    assert_eq!((a.0, b.0), (EXIT_OK, EXIT_OK));
    let va: serde_json::Value = serde_json::from_str(&a.1).unwrap();
    let vb: serde_json::Value = serde_json::from_str(&b.1).unwrap();
    assert_eq!(vb["seed"], 77);
    assert_ne!(va["latency"], vb["latency"]);
}

#[test]
fn posture_flag_hardens_a_baseline_scenario() {
    let (code, out, _) = call(&["attack-suite", "--config", &scenario("baseline-attack-suite"), "--posture", "hardened"]);
    assert_eq!(code, EXIT_OK);
    assert!(out.contains("bad_signature"), "{out}");
}
