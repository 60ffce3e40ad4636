#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

pub fn lab(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cdp-lab"))
        .arg("--root")
        .arg(root)
        .args(args)
        .output()
        .expect("spawn cdp-lab")
}

pub fn ok(root: &Path, args: &[&str]) -> String {
    let out = lab(root, args);
    assert!(
        out.status.success(),
        "cdp-lab {args:?} failed ({:?}):\n{}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Overrides for a pipeline that finishes in seconds.
pub const SMALL: &[&str] = &[
    "--set",
    "dataset.n_templates=12",
    "--set",
    "dataset.template_size=32",
    "--set",
    "dataset.train_fraction=0.34",
    "--set",
    "dataset.n_reps=2",
    "--set",
    "qc.calibration_templates=4",
    "--set",
    "train.epochs=2",
    "--set",
    "train.n_pairs=null",
    "--set",
    "train.generator.depth=2",
    "--set",
    "train.generator.base_channels=4",
    "--set",
    "train.discriminator.n_layers=2",
    "--set",
    "train.discriminator.base_channels=4",
];

pub fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v: Vec<&str> = SMALL.to_vec();
    v.extend_from_slice(args);
    v
}
