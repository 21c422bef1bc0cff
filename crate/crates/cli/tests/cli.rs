//! End-to-end runs of the `scenesynth` binary: every subcommand, the
//! documented exit codes, and byte determinism of generated artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_scenesynth");

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .output()
        .expect("binary should launch")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// 160x120 level camera over a small plaza; fast to simulate and render.
fn scene_toml(frames: u32, agents: (u32, u32), extra: &str) -> String {
    format!(
        r#"
[scene]
walkable = [[[0.0, 0.0], [12000.0, 0.0], [12000.0, 9000.0], [0.0, 9000.0]]]
spawn_zones = [[[1500.0, 1500.0], [10500.0, 1500.0], [10500.0, 7500.0], [1500.0, 7500.0]]]

[[scene.obstacles]]
footprint = [[5200.0, 4000.0], [6800.0, 4000.0], [6800.0, 5000.0], [5200.0, 5000.0]]
height_mm = 1100.0

[camera]
f_mm = 8.0
dx_mm = 0.05
dy_mm = 0.05
u0 = 80.0
v0 = 60.0
width = 160
height = 120
rotation = [1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0]
translation_mm = [-6000.0, 1600.0, 4000.0]

[sim]
n_agents = [{}, {}]
speed_mm_s = [900.0, 1500.0]
p_group = 0.3
p_phone = 0.1
dt_s = 0.4
frames = {}
seed = 11
{extra}
"#,
        agents.0, agents.1, frames
    )
}

fn write_scene(dir: &Path, name: &str, frames: u32, agents: (u32, u32), extra: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, scene_toml(frames, agents, extra)).unwrap();
    path
}

const FAST_TRAIN: &str = r#"
[train]
epochs = 3
hard_negative_rounds = 0
seed = 5
"#;

#[test]
fn generate_writes_dataset_and_reports_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_scene(tmp.path(), "scene.toml", 2, (0, 0), "");
    let out_dir = tmp.path().join("out");
    let out = run(&[
        "generate",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("frames=2"), "stdout: {}", stdout(&out));
    assert!(out_dir.join("manifest.txt").exists());
    assert!(out_dir.join("images/000001.ppm").exists());
    assert!(out_dir.join("annotations/000001.xml").exists());
}

#[test]
fn generate_same_seed_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_scene(tmp.path(), "scene.toml", 3, (2, 4), "");
    for name in ["a", "b"] {
        let out = run(&[
            "generate",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "99",
            "--out-dir",
            tmp.path().join(name).to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    }
    let read = |name: &str, file: &str| fs::read(tmp.path().join(name).join(file)).unwrap();
    assert_eq!(read("a", "manifest.txt"), read("b", "manifest.txt"));
    assert_eq!(read("a", "images/000002.ppm"), read("b", "images/000002.ppm"));
    assert_eq!(
        read("a", "annotations/000002.xml"),
        read("b", "annotations/000002.xml")
    );
}

#[test]
fn unknown_config_key_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_scene(tmp.path(), "scene.toml", 1, (0, 0), "bogus_key = 1\n");
    let out = run(&["generate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 2, "stderr: {}", stderr(&out));
}

#[test]
fn missing_config_file_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&[
        "generate",
        "--config",
        tmp.path().join("nope.toml").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 3, "stderr: {}", stderr(&out));
}

#[test]
fn config_flag_is_required_for_generate() {
    let out = run(&["generate"]);
    assert_eq!(code(&out), 2, "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("--config"));
}

#[test]
fn jobs_zero_exits_2() {
    let out = run(&["--jobs", "0", "generate"]);
    assert_eq!(code(&out), 2, "stderr: {}", stderr(&out));
}

#[test]
fn render_writes_requested_frame_as_ppm() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_scene(tmp.path(), "scene.toml", 1, (2, 2), "");
    let out_dir = tmp.path().join("out");
    let out = run(&[
        "render",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
        "--mode",
        "instance",
        "--frame",
        "2",
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let ppm = fs::read(out_dir.join("frame_000002_instance.ppm")).unwrap();
    assert_eq!(&ppm[..2], b"P6");
}

#[test]
fn bad_render_mode_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_scene(tmp.path(), "scene.toml", 1, (0, 0), "");
    let out = run(&[
        "render",
        "--config",
        cfg.to_str().unwrap(),
        "--mode",
        "wireframe",
    ]);
    assert_eq!(code(&out), 2, "stderr: {}", stderr(&out));
}

#[test]
fn label_imports_csv_with_rescaling() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_scene(tmp.path(), "scene.toml", 1, (0, 0), "");
    let csv = tmp.path().join("gt.csv");
    fs::write(
        &csv,
        "frame,id,x1,y1,x2,y2\n0,1,20,40,120,200\n0,2,bad,row,here,now\n1,1,30,50,130,210\n",
    )
    .unwrap();
    let out_dir = tmp.path().join("imported");
    let out = run(&[
        "label",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
        "--csv",
        csv.to_str().unwrap(),
        "--from-size",
        "320x240",
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("imported=2"), "stdout: {text}");
    assert!(text.contains("skipped_rows=1"), "stdout: {text}");
    assert!(out_dir.join("manifest.txt").exists());
    assert!(out_dir.join("annotations/000000.xml").exists());
    assert!(out_dir.join("annotations/000001.xml").exists());
    // 320x240 -> 160x120 halves every coordinate
    let xml = fs::read_to_string(out_dir.join("annotations/000000.xml")).unwrap();
    assert!(xml.contains("<xmin>11</xmin>"), "xml: {xml}");
}

#[test]
fn pipeline_generate_train_detect_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_scene(tmp.path(), "scene.toml", 10, (3, 5), FAST_TRAIN);
    let data = tmp.path().join("data");
    let out_dir = tmp.path().join("out");
    let cfg_s = cfg.to_str().unwrap();
    let data_s = data.to_str().unwrap();
    let out_s = out_dir.to_str().unwrap();

    let gen = run(&["generate", "--config", cfg_s, "--out-dir", data_s]);
    assert_eq!(code(&gen), 0, "stderr: {}", stderr(&gen));

    let train = run(&[
        "train", "--config", cfg_s, "--out-dir", out_s, "--dataset", data_s,
    ]);
    assert_eq!(code(&train), 0, "stderr: {}", stderr(&train));
    assert!(stdout(&train).contains("positives="));
    assert!(out_dir.join("model.bin").exists());

    let detect = run(&[
        "detect",
        "--config",
        cfg_s,
        "--out-dir",
        out_s,
        "--dataset",
        data_s,
        "--model",
        out_dir.join("model.bin").to_str().unwrap(),
    ]);
    assert_eq!(code(&detect), 0, "stderr: {}", stderr(&detect));
    assert!(out_dir.join("detections.csv").exists());

    let eval = run(&[
        "eval",
        "--config",
        cfg_s,
        "--out-dir",
        out_s,
        "--dataset",
        data_s,
        "--detections",
        out_dir.join("detections.csv").to_str().unwrap(),
        "--name",
        "self",
    ]);
    assert_eq!(code(&eval), 0, "stderr: {}", stderr(&eval));
    assert!(stdout(&eval).contains("ap="), "stdout: {}", stdout(&eval));
    assert!(out_dir.join("ap.csv").exists());
    assert!(out_dir.join("pr.svg").exists());

    let plot = run(&[
        "plot",
        "--config",
        cfg_s,
        "--out-dir",
        out_s,
        "--dataset",
        data_s,
        "--detections",
        &format!("run={}", out_dir.join("detections.csv").to_str().unwrap()),
    ]);
    assert_eq!(code(&plot), 0, "stderr: {}", stderr(&plot));
}

#[test]
fn eval_with_missing_detections_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_scene(tmp.path(), "scene.toml", 2, (0, 0), "");
    let data = tmp.path().join("data");
    let gen = run(&[
        "generate",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        data.to_str().unwrap(),
    ]);
    assert_eq!(code(&gen), 0);
    let out = run(&[
        "eval",
        "--config",
        cfg.to_str().unwrap(),
        "--dataset",
        data.to_str().unwrap(),
        "--detections",
        tmp.path().join("absent.csv").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 3, "stderr: {}", stderr(&out));
}

fn write_experiment_spec(dir: &Path, scene_a: &str, scene_b: &str, name: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(
        &path,
        format!(
            "specific_scene = \"{scene_a}\"\ngeneric_scene = \"{scene_b}\"\ntest_fraction = 0.34\nseeds = [1]\n"
        ),
    )
    .unwrap();
    path
}

#[test]
fn experiment_writes_summary_and_per_seed_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    write_scene(tmp.path(), "a.toml", 9, (3, 5), FAST_TRAIN);
    write_scene(tmp.path(), "b.toml", 9, (3, 5), FAST_TRAIN);
    let spec = write_experiment_spec(tmp.path(), "a.toml", "b.toml", "exp.toml");
    let out_dir = tmp.path().join("exp_out");
    let out = run(&[
        "experiment",
        "--spec",
        spec.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("mean_increment="), "stdout: {}", stdout(&out));
    assert!(out_dir.join("summary.csv").exists());
    assert!(out_dir.join("summary.txt").exists());
    for f in [
        "model_matched.bin",
        "model_mismatched.bin",
        "detections_matched.csv",
        "detections_mismatched.csv",
        "ap.csv",
        "pr.svg",
    ] {
        assert!(out_dir.join("seed_1").join(f).exists(), "missing {f}");
    }
}

#[test]
fn experiment_assert_positive_exits_4_when_flat() {
    let tmp = tempfile::tempdir().unwrap();
    // An impossible score threshold yields zero detections for both
    // models, so both APs are 0 and the increment cannot be positive.
    let extra = format!("{FAST_TRAIN}\n[eval]\nscore_threshold = 1e9\n");
    write_scene(tmp.path(), "a.toml", 9, (3, 5), &extra);
    let spec = write_experiment_spec(tmp.path(), "a.toml", "a.toml", "exp.toml");
    let out = run(&[
        "experiment",
        "--spec",
        spec.to_str().unwrap(),
        "--out-dir",
        tmp.path().join("out").to_str().unwrap(),
        "--assert-positive",
    ]);
    assert_eq!(code(&out), 4, "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("increment"), "stderr: {}", stderr(&out));
}
