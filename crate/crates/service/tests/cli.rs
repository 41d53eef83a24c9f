use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_retplan"));
    c.env_remove("RETINA_PLAN_WORKSPACE");
    c
}

fn run(c: &mut Command) -> Output {
    let out = c.output().unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

/// Scene with an image rendered by the `synth` command.
fn synth_scene(dir: &Path) -> PathBuf {
    run(bin().args(["synth", "--out"]).arg(dir.join("fundus.png")));
    let scene = dir.join("scene.json");
    std::fs::write(&scene, r#"{"schema_version": 1, "fundus": {"image": "fundus.png"}}"#).unwrap();
    scene
}

#[test]
fn plan_pixel_target_writes_record() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth_scene(dir.path());
    let out = dir.path().join("plan.json");
    let overlay = dir.path().join("overlay.json");
    run(bin()
        .args(["plan", "--scene"])
        .arg(&scene)
        .args(["--target-px", "512,300", "--out"])
        .arg(&out)
        .arg("--export-overlay")
        .arg(&overlay));
    let v = read_json(&out);
    assert_eq!(v["targets"][0]["input"], serde_json::json!({"x_px": 512.0, "y_px": 300.0}));
    assert_eq!(v["feasible"], true);
    assert!(read_json(&overlay)["both"]["runs"].as_array().unwrap().len() > 1);
}

#[test]
fn polar_targets_bypass_the_image_and_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene.json");
    std::fs::write(&scene, r#"{"schema_version": 1}"#).unwrap();
    let plan = |name: &str| {
        let out = dir.path().join(name);
        run(bin().args(["plan", "--scene"]).arg(&scene).args(["--target-polar", "170,0", "--out"]).arg(&out));
        let mut v = read_json(&out);
        v.as_object_mut().unwrap().remove("created_unix_ms");
        serde_json::to_string(&v).unwrap()
    };
    assert_eq!(plan("a.json"), plan("b.json"));
}

#[test]
fn workspace_env_overrides_flag() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene.json");
    std::fs::write(&scene, r#"{"schema_version": 1}"#).unwrap();
    let (flag_ws, env_ws) = (dir.path().join("flag"), dir.path().join("env"));
    run(bin()
        .env("RETINA_PLAN_WORKSPACE", &env_ws)
        .args(["plan", "--scene"])
        .arg(&scene)
        .args(["--target-polar", "170,90", "--workspace"])
        .arg(&flag_ws)
        .args(["--out", "/dev/null"]));
    assert_eq!(std::fs::read_dir(env_ws.join("plans")).unwrap().count(), 1);
    assert!(!flag_ws.exists());
}

#[test]
fn bad_scene_exits_nonzero_with_code() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene.json");
    std::fs::write(&scene, r#"{"schema_version": 1, "fundus": {"image": "missing.png"}}"#).unwrap();
    let out = bin().args(["plan", "--scene"]).arg(&scene).args(["--target-polar", "170,0"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error[scene_invalid]"));
}

#[test]
fn errorlab_run_emits_json_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let (out, csv) = (dir.path().join("r.json"), dir.path().join("r.csv"));
    run(bin().args(["errorlab", "run", "--kind", "trocar_roll", "--out"]).arg(&out).arg("--csv").arg(&csv));
    let v = read_json(&out);
    assert_eq!(v["kind"], "trocar_roll");
    assert_eq!(v["aggregate"].as_array().unwrap().len(), 9);
    assert!(v["fits"]["theta4"]["slope"].as_f64().unwrap().abs() > v["fits"]["theta2"]["slope"].as_f64().unwrap().abs());
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 46);
}

#[test]
fn montecarlo_is_reproducible() {
    let dists = repo_root().join("docs/examples/distributions.json");
    let go = || {
        let o = run(bin()
            .args(["errorlab", "montecarlo", "--distributions"])
            .arg(&dists)
            .args(["--trials", "200", "--seed", "11"]));
        String::from_utf8(o.stdout).unwrap()
    };
    let a = go();
    assert_eq!(a, go());
    let v: Value = serde_json::from_str(&a).unwrap();
    assert_eq!((v["rng"].as_str(), v["seed"].as_u64()), (Some("ChaCha8Rng"), Some(11)));
}

#[test]
fn ingest_centre_click_is_the_pole() {
    let dir = tempfile::tempdir().unwrap();
    synth_scene(dir.path());
    let o = run(bin().args(["ingest", "--image"]).arg(dir.path().join("fundus.png")).args(["--click", "512,512"]));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((v["targets"][0]["polar_deg"].as_f64().unwrap() - 180.0).abs() < 0.2);
}

#[test]
fn published_schemas_are_current() {
    run(bin().args(["schema", "--check", "--out-dir"]).arg(repo_root().join("docs/schemas")));
}
