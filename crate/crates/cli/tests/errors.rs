//! Exit codes and error messages.

mod common;

use std::fs;

use common::{lab, ok, stderr, with_small};

#[test]
fn missing_prerequisites_name_the_command() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("lab");
    for (cmd, needs) in [
        ("simulate", "gen"),
        ("attack", "gen"),
        ("score", "gen"),
        ("train", "gen"),
    ] {
        let out = lab(&root, &[cmd]);
        assert_eq!(out.status.code(), Some(2), "{cmd}");
        assert!(
            stderr(&out).contains(&format!("run `cdp-lab {needs}` first")),
            "{cmd}: {}",
            stderr(&out)
        );
    }
    ok(&root, &with_small(&["gen"]));
    for (cmd, needs) in [
        ("attack", "simulate"),
        ("score", "simulate"),
        ("train", "simulate"),
    ] {
        let out = lab(&root, &[cmd]);
        assert_eq!(out.status.code(), Some(2), "{cmd}");
        assert!(
            stderr(&out).contains(&format!("run `cdp-lab {needs}` first")),
            "{cmd}: {}",
            stderr(&out)
        );
    }
    ok(&root, &["simulate"]);
    let out = lab(&root, &["synth", "--cell", "HPI55/epson"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(
        stderr(&out).contains("run `cdp-lab train` first"),
        "{}",
        stderr(&out)
    );
    let out = lab(&root, &["score"]);
    assert!(
        stderr(&out).contains("run `cdp-lab attack` first"),
        "{}",
        stderr(&out)
    );
    // a failed command still leaves a run record
    let records = fs::read_dir(root.join("runs")).unwrap().count();
    assert!(records >= 4);
}

#[test]
fn usage_and_config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("lab");
    assert_eq!(lab(&root, &["frobnicate"]).status.code(), Some(1));
    assert_eq!(
        lab(&root, &["train", "--cell", "HPI55"]).status.code(),
        Some(1)
    );
    assert_eq!(
        lab(&root, &["--threads", "0", "gen"]).status.code(),
        Some(1)
    );
    assert_eq!(lab(&root, &["--help"]).status.code(), Some(0));
    let out = lab(&root, &["--set", "dataset.n_reps=1", "gen"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("n_reps"));
    let out = lab(
        &root,
        &["--set", "profiles.devices.0.shift_jitter_max=9", "gen"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("search_radius"));
    let out = lab(&root, &["--set", "profiles.devices[0].psf_sigma=2", "gen"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("devices[0]"), "{}", stderr(&out));
    let out = lab(&root, &["--set", "attack.device=phone", "gen"]);
    assert_eq!(out.status.code(), Some(1));

    let cfg = dir.path().join("bad.json");
    fs::write(
        &cfg,
        "{\n  \"seed\": 3,\n  \"dataset\": {\"n_templates\": 10, \"colour\": 1}\n}\n",
    )
    .unwrap();
    let out = lab(&root, &["--config", cfg.to_str().unwrap(), "gen"]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("colour") && err.contains("line 3"), "{err}");
    fs::write(
        &cfg,
        "{\n  \"seed\": 3,\n  \"dataset\": {\"n_templates\": 10,}\n}\n",
    )
    .unwrap();
    let out = lab(&root, &["--config", cfg.to_str().unwrap(), "gen"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));
    assert!(!root.join("dataset").exists());
}

#[test]
fn check_failure_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("lab");
    ok(&root, &with_small(&["run", "--no-train"]));
    // relabel probes so originals and fakes trade places under x_e
    let scores = fs::read_to_string(root.join("scores.csv")).unwrap();
    let swapped: String = scores
        .lines()
        .map(|l| {
            if l.contains(",xe,") && l.contains(",original,") {
                l.replace(",original,", ",fake,")
            } else if l.contains(",xe,") && l.contains(",fake,") {
                l.replace(",fake,", ",original,")
            } else {
                l.to_string()
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
        + "\n";
    fs::write(root.join("scores.csv"), swapped).unwrap();
    let out = lab(&root, &["evaluate", "--check"]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("criterion  1 FAIL"), "{stdout}");
    assert!(stderr(&out).contains("criterion 1"));
    // the record of a failed check still carries the stage timings
    let mut records: Vec<_> = fs::read_dir(root.join("runs"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    records.sort();
    let rec: serde_json::Value =
        serde_json::from_slice(&fs::read(records.last().unwrap()).unwrap()).unwrap();
    assert_eq!(rec["status"], "error");
    assert!(rec["stages"]["evaluate"].is_number());
}
