use std::path::Path;
use std::process::{Command, Output};

fn motionseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_motionseg")).args(args).output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(root: &Path, params: &str) {
    let params_file = root.join("params.json");
    std::fs::write(&params_file, params).unwrap();
    let out = motionseg(&["synth", "--out", p(&root.join("data")), "--params", p(&params_file)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn synth_segment_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    synth(root, r#"{"width": 48, "height": 48, "frame_count": 6, "square_size": 12}"#);
    let data = root.join("data");
    assert!(data.join("frames/00005.png").exists());
    assert!(data.join("flow/00001.flo").exists());
    assert!(!data.join("flow/00000.flo").exists());

    let masks = root.join("masks");
    let out = motionseg(&[
        "segment",
        "--frames",
        p(&data.join("frames")),
        "--flow",
        p(&data.join("flow")),
        "--proposals",
        p(&data.join("proposals")),
        "--out",
        p(&masks),
        "--stages",
        "so",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(masks.join("00000.png").exists() && masks.join("00005.png").exists());

    let report = root.join("scores.json");
    let out = motionseg(&[
        "eval",
        "--pred",
        p(&masks),
        "--gt",
        p(&data.join("gt")),
        "--report",
        p(&report),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    for key in ["j_mean", "j_recall", "j_decay", "f_mean"] {
        assert!(stdout.contains(key), "{stdout}");
    }
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert!(json["j_mean"].as_f64().unwrap() >= 0.9, "{json}");
    assert_eq!(json["per_frame_iou"].as_array().unwrap().len(), 5);
}

#[test]
fn flow_command_writes_one_file_per_later_frame() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), r#"{"width": 32, "height": 32, "frame_count": 3, "square_size": 8}"#);
    let flow = dir.path().join("est");
    let out = motionseg(&[
        "flow",
        "--frames",
        p(&dir.path().join("data/frames")),
        "--out",
        p(&flow),
        "--block",
        "3",
        "--radius",
        "3",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut names: Vec<_> = std::fs::read_dir(&flow)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["00001.flo", "00002.flo"]);
}

#[test]
fn ablate_prints_every_row() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), r#"{"width": 40, "height": 40, "frame_count": 5, "square_size": 10}"#);
    let data = dir.path().join("data");
    let out = motionseg(&[
        "ablate",
        "--frames",
        p(&data.join("frames")),
        "--flow",
        p(&data.join("flow")),
        "--proposals",
        p(&data.join("proposals")),
        "--gt",
        p(&data.join("gt")),
        "--json",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let stages: Vec<_> = json["rows"].as_array().unwrap().iter().map(|r| r["stages"].as_str().unwrap().to_string()).collect();
    assert_eq!(stages, ["S", "S+O", "S+O+P", "S+O+P+C"]);
}

#[test]
fn errors_are_one_line_and_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), r#"{"width": 32, "height": 32, "frame_count": 3, "square_size": 8}"#);
    let data = dir.path().join("data");
    let out = motionseg(&[
        "segment",
        "--frames",
        p(&data.join("frames")),
        "--out",
        p(&dir.path().join("masks")),
        "--stages",
        "s",
    ]);
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.trim_end().lines().count(), 1, "{stderr}");
    assert!(stderr.contains("flow"), "{stderr}");

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"width": 32, "bogus": 1}"#).unwrap();
    let out = motionseg(&["synth", "--out", p(&dir.path().join("x")), "--params", p(&bad)]);
    assert!(!out.status.success());
    assert_eq!(String::from_utf8(out.stderr).unwrap().trim_end().lines().count(), 1);
}

#[test]
fn missing_flow_is_estimated_on_request() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), r#"{"width": 32, "height": 32, "frame_count": 3, "square_size": 8}"#);
    let data = dir.path().join("data");
    let masks = dir.path().join("masks");
    let out = motionseg(&[
        "segment",
        "--frames",
        p(&data.join("frames")),
        "--out",
        p(&masks),
        "--stages",
        "s",
        "--estimate-flow",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(masks.join("00002.png").exists());
}
