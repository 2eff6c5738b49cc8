#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};

pub const SMALL_SPEC: &str = "\
n_gaussians = 150
n_views = 5
test_views = 2
width = 32
height = 32
feature_dim = 16
corruption = 0.1
seed = 3
";

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_econsg"))
}

/// Runs the binary in `dir`, panicking with its stderr on failure.
pub fn econsg(dir: &Path, args: &[&str]) -> String {
    let out = bin().current_dir(dir).args(args).output().expect("binary runs");
    assert!(out.status.success(), "econsg {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

pub fn spawn(dir: &Path, args: &[&str]) -> Child {
    bin().current_dir(dir).args(args).stdout(Stdio::null()).stderr(Stdio::piped()).spawn().expect("binary starts")
}

/// Every file under `root`, keyed by relative path.
pub fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    walkdir::WalkDir::new(root)
        .sort_by_file_name()
        .into_iter()
        .map(|e| e.unwrap())
        .filter(|e| e.file_type().is_file())
        .map(|e| (e.path().strip_prefix(root).unwrap().to_path_buf(), std::fs::read(e.path()).unwrap()))
        .collect()
}

/// Runs every command once in `dir`; returns the stdout of each.
pub fn run_chain(dir: &Path, spec: &str, iters: &str) -> Vec<String> {
    std::fs::write(dir.join("spec.txt"), spec).unwrap();
    let mut logs = Vec::new();
    let mut run = |args: &[&str]| logs.push(econsg(dir, args));
    run(&["synth", "--spec", "spec.txt", "--out", "s"]);
    run(&["crr", "--scene", "s", "--queries", "s/queries.ecsg", "--tau1", "0.45", "--tau2", "0.6", "--voxel", "0.03", "--provider", "oracle", "--out", "crr"]);
    run(&["fuse", "--scene", "s", "--supervision", "crr", "--out", "ctx.ecsg", "--labels-out", "labels.ecsg"]);
    run(&["train-ae", "--contextual", "ctx.ecsg", "--queries", "s/queries.ecsg", "--labels", "labels.ecsg", "--dz", "6", "--out", "ae.ecsg"]);
    run(&[
        "train", "--scene", "s", "--ae", "ae.ecsg", "--queries", "s/queries.ecsg", "--supervision", "crr", "--contextual", "ctx.ecsg", "--iters", iters,
        "--lr-sem", "0.0025", "--lambda2d", "1", "--lambdasem", "1", "--seed", "0", "--out", "scene.ecsg",
    ]);
    for mode in ["feature", "color", "alpha"] {
        let out = format!("render_{mode}.ecsg");
        run(&["render", "--gaussians", "scene.ecsg", "--cameras", "s/test/cameras.ecsg", "--view", "0", "--mode", mode, "--out", &out]);
    }
    let q = ["query", "--scene", "scene.ecsg", "--ae", "ae.ecsg", "--queries", "s/queries.ecsg", "--cameras", "s/test/cameras.ecsg"];
    run(&[&q[..], &["--mode", "segment", "--out", "pred"]].concat());
    run(&[&q[..], &["--mode", "segment", "--view", "1", "--out", "seg1.ecsg"]].concat());
    run(&[&q[..], &["--mode", "relevancy", "--view", "0", "--query", "class3", "--out", "rel.ecsg"]].concat());
    run(&[&q[..], &["--mode", "localize", "--view", "0", "--query", "class3", "--box", "0,0,15,31"]].concat());
    let e = ["--scene", "scene.ecsg", "--ae", "ae.ecsg", "--queries", "s/queries.ecsg", "--query", "class3", "--theta", "0.5"];
    run(&[&["edit", "--op", "delete"][..], &e[..], &["--out", "deleted.ecsg"]].concat());
    run(&[&["edit", "--op", "recolor", "--rgb", "1,0,1"][..], &e[..], &["--out", "recolored.ecsg"]].concat());
    run(&["eval", "--pred", "pred", "--gt", "s/test"]);
    logs
}
