use std::path::Path;
use std::process::{Command, Output};

const TINY: &[&str] = &[
    "--set",
    "train_scenes=1",
    "--set",
    "eval_scenes=1",
    "--set",
    "channels=4",
    "--set",
    "rays_per_camera=2",
    "--set",
    "occupancy_samples=4",
];

fn occlift(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_occlift"))
        .args(args)
        .args(TINY)
        .arg("--out-dir")
        .arg(out)
        .output()
        .unwrap()
}

#[test]
fn train_then_eval_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let out = occlift(&["train", "--steps", "2", "--seed", "3"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["config.txt", "loss.csv", "checkpoint.bin", "metrics.csv"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let loss = std::fs::read_to_string(dir.path().join("loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 3);
    assert!(loss.starts_with("step,"));

    let out = occlift(&["eval", "--seed", "3", "--set", "protocol=visible_only"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("eval_visible_only.csv").is_file());

    let out = occlift(&["export", "--seed", "3"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("export/scene0_pred.vol").is_file());
}

#[test]
fn gen_scenes_writes_rigs_and_depth() {
    let dir = tempfile::tempdir().unwrap();
    let out = occlift(&["gen-scenes"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let s = dir.path().join("scenes");
    for f in ["train0.vol", "train0_rig.toml", "train0_cam0_depth.bin", "eval0.vol"] {
        assert!(s.join(f).is_file(), "{f}");
    }
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = occlift(&["train", "--set", "bogus=1"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = occlift(&["train", "--set", "lr=fast"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = occlift(&["ablate", "--suite", "everything"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let missing = dir.path().join("nope.txt");
    let out = occlift(&["train", "--config", missing.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eval_without_checkpoint_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = occlift(&["eval"], dir.path());
    assert!(!out.status.success());
    assert_ne!(out.status.code(), Some(0));
}
