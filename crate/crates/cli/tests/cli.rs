use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_hashproctor"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str], cwd: &Path) -> Output {
    bin().args(args).current_dir(cwd).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn scenario_spec(dir: &Path) -> PathBuf {
    let spec = dir.join("spec.toml");
    std::fs::write(
        &spec,
        "seed = 3\nduration_frames = 120\nwidth = 160\nheight = 120\n\
         [[anomaly_segments]]\nstart = 40\nend = 90\ntransform = { shift = [45.0, 5.0], rotate = 20.0 }\n",
    )
    .unwrap();
    spec
}

#[test]
fn generate_detect_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let spec = scenario_spec(d);
    let o = run(&["gen-scenario", spec.to_str().unwrap(), "--out", "sc"], d);
    assert!(o.status.success(), "{o:?}");

    let o = run(&["detect", "sc/pipeline.toml"], d);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("1 event(s)"), "{}", stdout(&o));
    assert!(d.join("sc/out/report.json").is_file());

    let o = run(&["eval", "sc/out/report.json", "sc/ground_truth.jsonl", "--out", "m.json"], d);
    assert!(o.status.success(), "{o:?}");
    let rows: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("m.json")).unwrap()).unwrap();
    assert_eq!(rows[0]["participant"], "scenario-3");
    assert!(rows[0]["recall"].as_f64().unwrap() >= 60.0);

    // Sequential run: byte-identical report.
    let first = std::fs::read(d.join("sc/out/report.json")).unwrap();
    let o = run(&["--sequential", "detect", "sc/pipeline.toml"], d);
    assert!(o.status.success());
    assert_eq!(std::fs::read(d.join("sc/out/report.json")).unwrap(), first);
}

#[test]
fn hash_hide_calibrate() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let spec = scenario_spec(d);
    assert!(run(&["gen-scenario", spec.to_str().unwrap(), "-o", "sc"], d).status.success());

    let o = run(&["hash", "sc/frames/frame_000000.png", "--algo", "ahash", "--size", "8"], d);
    assert!(o.status.success());
    let line = stdout(&o);
    assert!(line.starts_with("a:8:") && line[4..20].chars().all(|c| c.is_ascii_hexdigit()), "{line}");

    let o = run(&["hide", "sc/frames", "sc/primary.jsonl", "--fallback", "sc/fallback.jsonl", "-o", "hidden", "--mode", "blur"], d);
    assert!(o.status.success(), "{o:?}");
    for i in [0, 60, 119] {
        let name = format!("frame_{i:06}.png");
        assert_ne!(
            std::fs::read(d.join("hidden").join(&name)).unwrap(),
            std::fs::read(d.join("sc/frames").join(&name)).unwrap()
        );
    }

    let o = run(&["calibrate-threshold", "sc/calibration", "--write"], d);
    assert!(o.status.success(), "{o:?}");
    let t: u32 = stdout(&o).trim().parse().unwrap();
    let session: serde_json::Value =
        serde_json::from_slice(&std::fs::read(d.join("sc/calibration/session.json")).unwrap()).unwrap();
    assert_eq!(session["threshold"], t);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let code = |args: &[&str]| run(args, d).status.code().unwrap();
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["frobnicate"]), 1);
    assert_eq!(code(&["hash"]), 1);
    assert_eq!(code(&["hash", "x.png", "--size", "1"]), 1);
    assert_eq!(code(&["bench", "mask", "."]), 1);
    assert_eq!(code(&["detect", "missing.toml"]), 2);
    assert_eq!(code(&["hash", "missing.png"]), 2);

    std::fs::write(d.join("bad.toml"), "frames_dir = 3").unwrap();
    assert_eq!(code(&["detect", "bad.toml"]), 2);

    let spec = scenario_spec(d);
    assert!(run(&["gen-scenario", spec.to_str().unwrap(), "-o", "sc"], d).status.success());
    assert_eq!(code(&["hide", "sc/frames", "sc/primary.jsonl", "-o", "sc/frames"]), 1);
    // No calibration: the pipeline refuses to start.
    std::fs::remove_dir_all(d.join("sc/calibration")).unwrap();
    let o = run(&["detect", "sc/pipeline.toml"], d);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("calibrate"));
}

#[test]
fn bench_prints_json() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let spec = scenario_spec(d);
    assert!(run(&["gen-scenario", spec.to_str().unwrap(), "-o", "sc"], d).status.success());
    let o = run(&["bench", "pipeline", "sc/frames", "--detections", "sc/primary.jsonl", "--limit", "20", "--reps", "1"], d);
    assert!(o.status.success(), "{o:?}");
    let r: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(r["stage"], "pipeline");
    assert_eq!(r["frames"], 20);
    assert!(r["fps"].as_f64().unwrap() > 0.0);
}
