use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_modeladapt")).args(args).output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn validate_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"schemas\": ").unwrap();
    let out = run(&["validate", p(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ERROR model:"));

    let demo = dir.path().join("demo");
    assert!(run(&["demo", p(&demo)]).status.success());
    let catalog = demo.join("catalog.json");
    let out = run(&["validate", p(&catalog)]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(!stdout.is_empty() && stdout.lines().all(|l| l.starts_with("WARNING")), "{stdout}");

    // The data directory is never overwritten.
    assert_eq!(run(&["demo", p(&demo)]).status.code(), Some(1));
}

#[test]
fn load_then_reject_duplicates() {
    let dir = tempfile::tempdir().unwrap();
    let demo = dir.path().join("demo");
    assert!(run(&["demo", p(&demo)]).status.success());
    let csv = dir.path().join("species.csv");
    std::fs::write(&csv, "Name\nXenopus tropicalis\n").unwrap();
    let (catalog, data) = (demo.join("catalog.json"), demo.join("data"));
    let args = ["load", p(&catalog), p(&data), "Vocab:Species", p(&csv)];
    let out = run(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "1 rows loaded into Vocab:Species");
    let out = run(&args);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
}

#[test]
fn set_annotation_bumps_the_version() {
    let dir = tempfile::tempdir().unwrap();
    let demo = dir.path().join("demo");
    assert!(run(&["demo", p(&demo)]).status.success());
    let catalog = demo.join("catalog.json");
    let out = run(&["set-annotation", p(&catalog), "display", "{\"name\": \"Studies\"}", "--table", "RNASeq:Study"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "catalog version 2");
    let doc: serde_json::Value = serde_json::from_slice(&std::fs::read(&catalog).unwrap()).unwrap();
    assert_eq!(
        doc["schemas"]["RNASeq"]["tables"]["Study"]["annotations"]["tag:misd.isi.edu,2015:display"]["name"],
        "Studies"
    );
    let out = run(&["set-annotation", p(&catalog), "display", "--table", "RNASeq:Study", "--delete"]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "catalog version 3");
}
