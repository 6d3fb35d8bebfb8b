use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_garment-refit"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn scratch(tag: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("garment-refit-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    d
}

#[test]
fn generate_refit_and_verify() {
    let dir = scratch("smoke");
    let scene = dir.join("scene");
    let s = scene.to_str().unwrap();
    let out = run(&["gen-scene", "--seed", "7", "--preset", "small", "--out", s]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(scene.join("scene.json").exists());

    let out = run(&[
        "refit", "--scene", s, "--fit-region", "waist", "--coarse-iterations", "100", "--fine-iterations", "50",
        "--deterministic",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["report.json", "shirt.obj", "shirt_weights.jsonl", "trace_shirt.jsonl"] {
        assert!(scene.join("out").join(f).exists(), "missing {f}");
    }

    let out = run(&["verify", "--scene", s]);
    assert!(out.status.success());
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.lines().count() >= 10);
    assert!(table.lines().all(|l| l.starts_with("PASS")), "{table}");

    let bench = dir.join("bench");
    let out = run(&[
        "bench-conditioning", "--scene", s, "--iterations", "50", "--deterministic", "--out",
        bench.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("displacement spread"));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(bench.join("conditioning.json")).unwrap()).unwrap();
    assert!(report["bone_local_spread"].is_number());
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn sequence_and_multilayer() {
    let dir = scratch("seq");
    let seq = dir.join("seq");
    let s = seq.to_str().unwrap();
    let out = run(&["gen-scene", "--preset", "small", "--arm-raise", "0,10", "--out", s]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = run(&["refit-sequence", "--sequence", s, "--resolution", "single", "--iterations", "20"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(seq.join("out/frame_0001/report.json").exists());

    let layered = dir.join("layered");
    let l = layered.to_str().unwrap();
    assert!(run(&["gen-scene", "--preset", "two-layer", "--out", l]).status.success());
    let out = run(&["refit-multilayer", "--scene", l, "--resolution", "single", "--iterations", "20"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(layered.join("out/report.json")).unwrap()).unwrap();
    assert_eq!(report["garments"].as_array().unwrap().len(), 2);
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn missing_scene_reports_the_path() {
    let dir = scratch("missing");
    let out = run(&["refit", "--scene", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let record: serde_json::Value = serde_json::from_str(String::from_utf8_lossy(&out.stderr).trim()).unwrap();
    assert_eq!(record["kind"], "io");
    assert!(record["message"].as_str().unwrap().contains("scene.json"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = run(&["refit", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}
