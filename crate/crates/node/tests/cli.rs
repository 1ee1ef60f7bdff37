use std::path::PathBuf;
use std::process::{Command, Output};

fn corpus(file: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../corpus")
        .join(file)
}

fn subjektiv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_subjektiv"))
        .args(args)
        .env("RUST_LOG", "off")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn path(p: &PathBuf) -> &str {
    p.to_str().unwrap()
}

#[test]
fn validate_accepts_the_corpus_and_reports_violations() {
    let ok = subjektiv(&["validate", path(&corpus("send_receive.sbpm"))]);
    assert_eq!(ok.status.code(), Some(0));
    assert!(ok.stdout.is_empty());

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.sbpm");
    std::fs::write(
        &bad,
        "process P { subject X behavior X { start do a \"A\" on \"go\" -> a } }",
    )
    .unwrap();
    let out = subjektiv(&["validate", path(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains("NO_END_STATE"), "{}", stdout(&out));

    std::fs::write(&bad, "process P {\n  subject\n}").unwrap();
    let out = subjektiv(&["validate", path(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains(":3:1: expected"), "{}", stdout(&out));
}

#[test]
fn fmt_prints_checks_and_rewrites() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("m.sbpm");
    std::fs::copy(corpus("racing.sbpm"), &file).unwrap();
    let printed = subjektiv(&["fmt", path(&file)]);
    assert_eq!(printed.status.code(), Some(0));
    assert_eq!(
        subjektiv(&["fmt", "--check", path(&file)]).status.code(),
        Some(1)
    );
    assert_eq!(
        subjektiv(&["fmt", "--write", path(&file)]).status.code(),
        Some(0)
    );
    assert_eq!(std::fs::read_to_string(&file).unwrap(), stdout(&printed));
    assert_eq!(
        subjektiv(&["fmt", "--check", path(&file)]).status.code(),
        Some(0)
    );
}

#[test]
fn run_with_the_corpus_script_prints_the_golden() {
    let out = subjektiv(&[
        "run",
        path(&corpus("contingent_request.sbpm")),
        "--script",
        path(&corpus("contingent_request.b_late.script.json")),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let golden = std::fs::read_to_string(corpus("contingent_request.b_late.golden.jsonl")).unwrap();
    assert_eq!(stdout(&out), golden);
}

#[test]
fn run_without_a_script_takes_first_branches() {
    let out = subjektiv(&["run", path(&corpus("send_receive.sbpm"))]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).lines().count() > 3);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("Customer#0: completed"), "{stderr}");
}

#[test]
fn analyze_exit_code_follows_the_verdict() {
    let clean = subjektiv(&["analyze", path(&corpus("contingent_request.sbpm"))]);
    assert_eq!(clean.status.code(), Some(0));
    assert!(stdout(&clean).contains("no deadlock"));

    let stuck = subjektiv(&[
        "analyze",
        path(&corpus("multi_responses.no_timer.sbpm")),
        "--json",
    ]);
    assert_eq!(stuck.status.code(), Some(1));
    let report: serde_json::Value = serde_json::from_slice(&stuck.stdout).unwrap();
    assert!(!report["deadlocks"].as_array().unwrap().is_empty());
}

#[test]
fn corpus_commands() {
    let list = subjektiv(&["corpus", "list"]);
    assert_eq!(list.status.code(), Some(0));
    assert!(stdout(&list).contains("racing.latest"));

    let run = subjektiv(&["corpus", "run", "racing", "--variants", "--repeat", "3"]);
    assert_eq!(run.status.code(), Some(0), "{}", stdout(&run));
    assert!(
        stdout(&run).lines().all(|l| l.starts_with("PASS")),
        "{}",
        stdout(&run)
    );

    let unknown = subjektiv(&["corpus", "run", "no_such_case"]);
    assert_ne!(unknown.status.code(), Some(0));
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(subjektiv(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(subjektiv(&["run"]).status.code(), Some(2));
    assert_eq!(
        subjektiv(&["fmt", "--write", "--check", "x.sbpm"])
            .status
            .code(),
        Some(2)
    );
}
