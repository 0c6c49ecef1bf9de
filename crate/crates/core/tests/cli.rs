use std::path::Path;
use std::process::Command;

fn mvoc(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_mvoc")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_job_compose_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let jobdir = tmp.path().join("job");
    let out = mvoc(&["gen-job", "--out", s(&jobdir), "--seed", "2", "--frames", "5", "--size", "12"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    // shrink the run so the test stays quick
    let job_path = jobdir.join("job.json");
    let mut job: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&job_path).unwrap()).unwrap();
    job["n_steps"] = 4.into();
    job["backend"]["widths"] = serde_json::json!([4, 8]);
    std::fs::write(&job_path, job.to_string()).unwrap();

    let res = tmp.path().join("res");
    let out = mvoc(&["compose", "--job", s(&job_path), "--out", s(&res), "--explain"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("step   1 t=1000"), "{stdout}");
    assert!(stdout.contains("warp G=2"), "{stdout}");
    for f in ["video.vten", "metrics.json", "injection_report.json", "warp_g4.csv", "first_frame.ppm"] {
        assert!(res.join(f).exists(), "missing {f}");
    }

    let csv = tmp.path().join("w.csv");
    let out = mvoc(&["eval", "--video", s(&res.join("video.vten")), "--flow", s(&res), "--interval", "2", "--out", s(&csv)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("t,error\n") && text.contains("mean,"));
}

#[test]
fn gen_data_and_invert() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tmp.path().join("scene.json");
    std::fs::write(
        &spec,
        r#"{"height": 8, "width": 8, "frames": 3, "background": {"kind": "solid", "color": [0.2, 0.2, 0.2]},
            "objects": [{"id": 1, "shape": "disc", "size": 3, "color": [0.9, 0.5, 0.1],
                         "trajectory": {"kind": "linear", "start": [4, 2], "velocity": [0, 1]}, "layer": 1}], "seed": 0}"#,
    )
    .unwrap();
    let scene = tmp.path().join("scene");
    let out = mvoc(&["gen-data", "--spec", s(&spec), "--out", s(&scene)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(scene.join("flow_g2.vten").exists() && scene.join("previews").is_dir());

    let cfg = tmp.path().join("run.json");
    std::fs::write(&cfg, r#"{"n_steps": 5, "unet": {"widths": [4, 8]}}"#).unwrap();
    let inv = tmp.path().join("inv");
    let out = mvoc(&["invert", "--video", s(&scene.join("video.vten")), "--config", s(&cfg), "--out", s(&inv)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(inv.join("reconstruction.vten").exists() && inv.join("invert_report.json").exists());
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = mvoc(&["compose", "--job", s(&tmp.path().join("nope.json")), "--out", s(tmp.path())]);
    assert_eq!(missing.status.code(), Some(3));
    let bad = mvoc(&["eval", "--video", "v", "--flow", "f", "--interval", "3", "--out", "o"]);
    assert_eq!(bad.status.code(), Some(2));
    let job = tmp.path().join("job.json");
    std::fs::write(&job, r#"{"background": "bg", "objects": [], "injection": {"r_fn": 1.5}}"#).unwrap();
    let invalid = mvoc(&["compose", "--job", s(&job), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(invalid.status.code(), Some(2), "{}", String::from_utf8_lossy(&invalid.stderr));
}
