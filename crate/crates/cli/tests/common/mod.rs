#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn tto(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tto"))
        .args(["--quiet"])
        .args(args)
        .output()
        .expect("tto runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

pub fn ok(args: &[&str]) -> Output {
    let out = tto(args);
    assert!(
        out.status.success(),
        "tto {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Writes a small scene spec (80x80, 12 frames, 3 keypoints) to `dir/spec.json`.
pub fn small_spec(dir: &Path) -> PathBuf {
    let spec = serde_json::json!({
        "frames": 12,
        "width": 80,
        "height": 80,
        "num_keypoints": 3,
        "limb_length": [8.0, 10.0],
        "limb_half_width": 2.0,
        "joint_radius": 3.0,
        "distractors": 1,
        "motion": { "path_amplitude": 5.0 }
    });
    let path = dir.join("spec.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&spec).unwrap()).unwrap();
    path
}

/// Synthesizes one small scene under `dir/scenes` and returns its directory.
pub fn small_scene(dir: &Path, seed: u64) -> PathBuf {
    let spec = small_spec(dir);
    let out = dir.join("scenes");
    let seed = seed.to_string();
    ok(&["synth", "--spec", p(&spec), "--out", p(&out), "--seed", &seed, "--schedule", "interval-3"]);
    out.join(format!("scene-{:03}", seed.parse::<u64>().unwrap()))
}
