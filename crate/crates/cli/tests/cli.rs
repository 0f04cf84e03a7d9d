use std::path::PathBuf;
use std::process::Command;

use origami_reservoir::config::RunManifest;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_origami-rc"))
}

fn scratch(name: &str) -> PathBuf {
    let d = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

#[test]
fn config_errors_name_the_field() {
    let d = scratch("cli-config-error");
    let cfg = d.join("bad.toml");
    std::fs::write(&cfg, "[design]\ngama_deg = 40\n").unwrap();
    let out = bin().args(["simulate", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("design.gama_deg"));
    let out = bin().args(["simulate", "--dt=-1", "--out-dir"]).arg(d.join("x")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sim.dt"));
}

#[test]
fn simulate_writes_trace_and_manifest() {
    let d = scratch("cli-simulate");
    let out = bin().args(["simulate", "--duration", "0.5", "--seed", "4", "--out-dir"]).arg(&d).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = RunManifest::from_json(&std::fs::read_to_string(d.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.command, "simulate");
    assert_eq!(manifest.config.seed, 4);
    assert!(manifest.config.roles.assignment.is_some());
    let trace = std::fs::read_to_string(d.join("trace.csv")).unwrap();
    let mut lines = trace.lines();
    assert!(lines.next().unwrap().starts_with("t,phi_"));
    assert_eq!(lines.count(), 500);
}
