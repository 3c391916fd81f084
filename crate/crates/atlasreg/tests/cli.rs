//! The command-line binary end to end: synthesis, cropping, a batch run and
//! its exit codes.

use std::fs;
use std::path::Path;
use std::process::Command;

fn atlasreg(args: &[&str], cwd: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_atlasreg"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

#[test]
fn synthetic_cohort_runs_through_the_batch_commands() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = atlasreg(
        &[
            "synth",
            "--out",
            "c",
            "--subjects",
            "2",
            "--size",
            "32",
            "--spacing",
            "3",
        ],
        d,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out = atlasreg(
        &[
            "crop",
            "--image",
            "c/s00.nii.gz",
            "--scores",
            "auto",
            "--out",
            "crop.nii.gz",
        ],
        d,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let record: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(record.is_object());
    assert!(d.join("crop.nii.gz").exists());

    let out = atlasreg(&["pipeline", "--config", "c/config.json"], d);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(d.join("c/out/results.json").exists());

    let out = atlasreg(&["eval", "--config", "c/config.json"], d);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    fs::write(d.join("c/s01.nii.gz"), b"garbage").unwrap();
    let out = atlasreg(&["pipeline", "--config", "c/config.json", "--out", "again"], d);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_configuration_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("config.json"),
        r#"{"atlas": "a.nii", "subjects": [], "out_dir": "o"}"#,
    )
    .unwrap();
    let out = atlasreg(&["pipeline", "--config", "config.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let out = atlasreg(&["pipeline", "--config", "absent.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}
