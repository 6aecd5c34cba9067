#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

pub fn scenes_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenes")
}

pub fn scene_path(name: &str) -> PathBuf {
    scenes_dir().join(name)
}

pub fn facelight(args: &[&str]) -> Output {
    facelight_env(args, &[])
}

pub fn facelight_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_facelight"));
    cmd.args(args).env_remove("FACELIGHT_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("run facelight")
}

/// Runs the binary and panics with its stderr unless it exits 0.
pub fn facelight_ok(args: &[&str]) -> String {
    let out = facelight(args);
    assert!(
        out.status.success(),
        "facelight {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

pub fn write_json(path: &Path, v: &Value) {
    fs::write(path, serde_json::to_string_pretty(v).unwrap()).unwrap();
}

/// Copies a bundled scene into `dir` with absolute light paths and every
/// orbit set to `resolution`, applying `edit` last.
pub fn scene_variant(name: &str, dir: &Path, out_name: &str, resolution: usize, edit: impl FnOnce(&mut Value)) -> PathBuf {
    let mut v = read_json(&scene_path(name));
    if let Some(p) = v["light"].get("path").and_then(Value::as_str) {
        v["light"]["path"] = Value::from(scene_path(p).to_str().unwrap());
    }
    if let Some(orbits) = v["orbits"].as_array_mut() {
        for o in orbits {
            o["resolution"] = Value::from(resolution);
        }
    }
    edit(&mut v);
    let out = dir.join(out_name);
    write_json(&out, &v);
    out
}

/// Fit job over 32² oracle views of the bundled sphere with small networks.
/// `edit` sees the whole job document.
pub fn small_fit_job(dir: &Path, steps: usize, edit: impl FnOnce(&mut Value)) -> PathBuf {
    let truth = scene_variant("sphere.json", dir, "truth.json", 32, |_| {});
    let init = scene_variant("sphere_init.json", dir, "init.json", 32, |v| {
        v["geometry"]["displacement"]["hidden"] = json!([16]);
        v["material"]["hidden"] = json!([16]);
    });
    let mut job = json!({
        "scene": init,
        "data": {"kind": "oracle", "truth": truth, "spp": 8, "seed": 1},
        "fit": {"steps": steps, "batch_rays": 256, "geometry_samples": 64,
                "group_lr": {"light": 100.0, "beta": 100.0, "material": 10.0, "calibration": 10.0}}
    });
    edit(&mut job);
    let path = dir.join("job.json");
    write_json(&path, &job);
    path
}
