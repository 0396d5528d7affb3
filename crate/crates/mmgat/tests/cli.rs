//! End-to-end checks of the `mmgat` binary: exit codes, output shape and
//! determinism of the on-disk artifacts.

use std::path::Path;
use std::process::{Command, Output};

fn mmgat(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmgat"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

#[test]
fn help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = mmgat(&["--help"], dir.path());
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("synth"));
}

#[test]
fn unknown_flag_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = mmgat(&["synth", "--bogus"], dir.path());
    assert_eq!(code(&out), 1);
}

#[test]
fn synth_writes_deterministic_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "synth", "--frames", "4", "--points", "6", "--joints", "3", "--seed", "5", "--out", "a",
    ];
    assert_eq!(code(&mmgat(&args, dir.path())), 0);
    let mut args2 = args;
    args2[args.len() - 1] = "b";
    assert_eq!(code(&mmgat(&args2, dir.path())), 0);
    let pa = std::fs::read(dir.path().join("a.points.csv")).unwrap();
    let pb = std::fs::read(dir.path().join("b.points.csv")).unwrap();
    assert_eq!(pa, pb);
    let points = String::from_utf8(pa).unwrap();
    // header plus 4 frames x 6 points
    assert_eq!(points.lines().count(), 1 + 24);
    assert!(dir.path().join("a.labels.csv").exists());
}

#[test]
fn synth_rejects_zero_frames() {
    let dir = tempfile::tempdir().unwrap();
    let out = mmgat(
        &["synth", "--frames", "0", "--points", "6", "--joints", "3", "--out", "a"],
        dir.path(),
    );
    assert_eq!(code(&out), 1);
}

#[test]
fn preprocess_reports_denoised_frames() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        code(&mmgat(
            &["synth", "--frames", "5", "--points", "4", "--joints", "3", "--seed", "2", "--out", "raw"],
            dir.path(),
        )),
        0
    );
    // plant an out-of-range keypoint in frame 1
    let labels_path = dir.path().join("raw.labels.csv");
    let labels = std::fs::read_to_string(&labels_path).unwrap();
    let patched: Vec<String> = labels
        .lines()
        .map(|l| {
            if l.starts_with("1,") {
                let mut cols: Vec<&str> = l.split(',').collect();
                cols[1] = "9.0";
                cols.join(",")
            } else {
                l.to_string()
            }
        })
        .collect();
    std::fs::write(&labels_path, patched.join("\n") + "\n").unwrap();

    let out = mmgat(
        &["preprocess", "--in", "raw.points.csv", "--out", "clean", "--denoise-bound", "5"],
        dir.path(),
    );
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(text.contains("removed 1 frames"));
    assert!(text.contains("removed frame_id 1"));
    assert!(dir.path().join("clean.points.csv").exists());
}

#[test]
fn preprocess_rejects_even_window() {
    let dir = tempfile::tempdir().unwrap();
    let out = mmgat(
        &["preprocess", "--in", "x.points.csv", "--out", "y", "--fuse-window", "2"],
        dir.path(),
    );
    assert_eq!(code(&out), 1);
}

#[test]
fn missing_input_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = mmgat(
        &["preprocess", "--in", "nope.points.csv", "--out", "y"],
        dir.path(),
    );
    assert_eq!(code(&out), 2);
}

#[test]
fn train_eval_inspect_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        code(&mmgat(
            &["synth", "--frames", "6", "--points", "5", "--joints", "3", "--seed", "3", "--out", "ds"],
            dir.path(),
        )),
        0
    );
    std::fs::write(
        dir.path().join("train.toml"),
        r#"
batch_size = 3
epochs = 2
base_lr = 1e-3
lr_factor = 0.995
k_neighbors = 3
loss = "mse"
seed = 4
checkpoint_path = "model.ckpt"
"#,
    )
    .unwrap();

    let out = mmgat(
        &["train", "--config", "train.toml", "--data", "ds.points.csv"],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("model.ckpt").exists());
    let log = std::fs::read_to_string(dir.path().join("model.ckpt.log")).unwrap();
    assert_eq!(log.lines().count(), 2);
    assert!(log.starts_with("epoch=0 lr="));

    let out = mmgat(
        &["eval", "--checkpoint", "model.ckpt", "--data", "ds.points.csv", "--protocol", "mri"],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(text.contains("mpjpe_cm:"));
    assert!(text.contains("pa_mpjpe_cm:"));
    assert!(!text.contains("mae_x_cm:"));

    let out = mmgat(
        &["eval", "--checkpoint", "model.ckpt", "--data", "ds.points.csv", "--protocol", "mars"],
        dir.path(),
    );
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(text.contains("mae_avg_cm:"));
    assert!(text.contains("rmse_avg_cm:"));

    let out = mmgat(&["inspect", "--checkpoint", "model.ckpt"], dir.path());
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(text.contains("joint_count: 3"));
    assert!(text.contains("param head.4.w [256, 9]"));
    assert!(text.contains("total_scalars:"));
}

#[test]
fn eval_rejects_unknown_protocol() {
    let dir = tempfile::tempdir().unwrap();
    let out = mmgat(
        &["eval", "--checkpoint", "x", "--data", "y", "--protocol", "coco"],
        dir.path(),
    );
    assert_eq!(code(&out), 1);
}

#[test]
fn eval_missing_checkpoint_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = mmgat(
        &["eval", "--checkpoint", "nope.ckpt", "--data", "y", "--protocol", "mri"],
        dir.path(),
    );
    assert_eq!(code(&out), 2);
}
