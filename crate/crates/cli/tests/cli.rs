use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_urbangrad"))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, spec: &str) -> PathBuf {
    let spec_path = dir.join("spec.json");
    std::fs::write(&spec_path, spec).unwrap();
    let out = dir.join("scene");
    let st = bin().args(["synth", "--spec", s(&spec_path), "--out", s(&out)]).output().unwrap();
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    out
}

const SMALL: &str = r#"{"width": 192, "height": 192, "resolution_m": 20.0,
    "centers": [{"x": 96, "y": 96, "d0": 2.0, "decay": 1.5}], "noise_sigma": 0.05, "seed": 9}"#;

fn analyze(scene: &Path, out: &Path, extra: &[&str]) -> Output {
    bin()
        .args(["analyze", "--optical", s(&scene.join("optical.f32")), "--sar", s(&scene.join("sar.f32")), "--out", s(out)])
        .args(extra)
        .output()
        .unwrap()
}

#[test]
fn synth_writes_scene_and_truth() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth(dir.path(), SMALL);
    for f in ["optical.f32", "optical.json", "sar.f32", "sar.json", "density.f32", "density.json", "truth.json"] {
        assert!(scene.join(f).exists(), "{f}");
    }
    let truth: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(scene.join("truth.json")).unwrap()).unwrap();
    assert_eq!(truth["spec"]["centers"][0]["d0"], 2.0);
    assert_eq!(truth["max_density"], 2.0);
}

#[test]
fn analyze_succeeds_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth(dir.path(), SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let first = analyze(&scene, &a, &[]);
    assert_eq!(first.status.code(), Some(0), "{}", String::from_utf8_lossy(&first.stderr));
    assert_eq!(analyze(&scene, &b, &[]).status.code(), Some(0));
    for f in ["report.json", "profile.csv", "gradient.svg", "difference.svg", "segmentation.png"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let report = std::fs::read_to_string(a.join("report.json")).unwrap();
    assert!(!report.contains("generated_at"));
}

#[test]
fn timestamp_is_opt_in() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth(dir.path(), SMALL);
    let out = dir.path().join("t");
    assert_eq!(analyze(&scene, &out, &["--timestamp"]).status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert!(v["generated_at"].is_string());
}

#[test]
fn misaligned_inputs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth(dir.path(), SMALL);
    let other = dir.path().join("other");
    std::fs::create_dir(&other).unwrap();
    let spec = SMALL.replace("\"height\": 192", "\"height\": 160");
    let small = synth(&other, &spec);
    let st = bin()
        .args(["analyze", "--optical", s(&scene.join("optical.f32")), "--sar", s(&small.join("sar.f32")), "--out", s(&dir.path().join("o"))])
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&st.stderr).contains("alignment"));
}

#[test]
fn bad_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth(dir.path(), SMALL);
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"tau_centre": 1.4}"#).unwrap();
    let st = analyze(&scene, &dir.path().join("o"), &["--config", s(&cfg)]);
    assert_eq!(st.status.code(), Some(2));
}

#[test]
fn config_overrides_are_echoed() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth(dir.path(), SMALL);
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"prominence_factor": 0.05, "rho_target": {"mode": "absolute", "value": 0.9}}"#).unwrap();
    let out = dir.path().join("o");
    assert_eq!(analyze(&scene, &out, &["--config", s(&cfg)]).status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(v["config"]["prominence_factor"], 0.05);
    assert_eq!(v["gradient"]["rho_target"], 0.9);
}

#[test]
fn missing_input_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let st = bin()
        .args(["analyze", "--optical", "nope.png", "--sar", "nope.png", "--resolution-m", "10", "--out", s(&dir.path().join("o"))])
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(2));
}

#[test]
fn flat_scene_is_a_stage_failure() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("flat");
    std::fs::create_dir(&scene).unwrap();
    for name in ["optical", "sar"] {
        let bytes: Vec<u8> = std::iter::repeat(0.5f32.to_le_bytes()).take(64 * 64).flatten().collect();
        std::fs::write(scene.join(format!("{name}.f32")), bytes).unwrap();
        std::fs::write(scene.join(format!("{name}.json")), r#"{"width": 64, "height": 64, "resolution_m": 10.0}"#).unwrap();
    }
    let st = analyze(&scene, &dir.path().join("o"), &[]);
    assert_eq!(st.status.code(), Some(1), "{}", String::from_utf8_lossy(&st.stderr));
    assert!(String::from_utf8_lossy(&st.stderr).contains("histogram"));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(bin().arg("analyze").output().unwrap().status.code(), Some(2));
    assert_eq!(bin().arg("--help").output().unwrap().status.code(), Some(0));
}
