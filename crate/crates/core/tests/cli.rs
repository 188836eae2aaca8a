use std::path::PathBuf;
use std::process::Command;

use negotiation::cli::{app, io};

fn fixture(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(format!("{name}.json"))
        .display()
        .to_string()
}

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("negotiate").chain(args.iter().copied());
    let code = app::run(argv, &mut out, &mut err);
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}

#[test]
fn check_exit_codes_follow_soundness() {
    let (code, out, _) = run(&["check", &fixture("fdm_cyclic")]);
    assert_eq!(code, 0, "{out}");
    assert!(out.starts_with("sound"));
    let (code, out, _) = run(&["check", &fixture("fdm_unsound")]);
    assert_eq!(code, 1);
    assert!(out.contains("witness: (n0,st)(n1,yes)"), "{out}");
}

#[test]
fn errors_exit_with_two() {
    let (code, _, err) = run(&["check", "/nonexistent/file.json"]);
    assert_eq!(code, 2);
    assert!(err.contains("error"));
    let (code, _, _) = run(&["frobnicate"]);
    assert_eq!(code, 2);
    let (code, _, _) = run(&["check", &fixture("fdm_cyclic"), "--cap", "2"]);
    assert_eq!(code, 2);
}

#[test]
fn validate_reports_violations() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    let text = r#"{"agents": ["A"], "atoms": [
        {"id": "n0", "parties": ["A"], "results": [{"name": "r", "next": {"A": ["nf"]}}]},
        {"id": "lost", "parties": ["A"], "results": [{"name": "r", "next": {"A": ["nf"]}}]},
        {"id": "nf", "parties": ["A"], "results": [{"name": "f", "next": {"A": []}}]}
    ], "initial": "n0", "final": "nf"}"#;
    std::fs::write(&path, text).unwrap();
    let (code, _, err) = run(&["validate", path.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(err.contains("lost"), "{err}");
    let (code, out, _) = run(&["validate", &fixture("ladder")]);
    assert_eq!(code, 0);
    assert!(out.starts_with("valid"));
}

#[test]
fn classify_prints_the_classes() {
    let (code, out, _) = run(&["classify", &fixture("fdm_acyclic")]);
    assert_eq!(code, 0);
    assert!(out.contains("deterministic: false"));
    assert!(out.contains("weakly deterministic: true"));
    assert!(out.contains("acyclic: true"));
}

#[test]
fn both_summarize_methods_print_the_final_result() {
    for method in ["states", "reduce"] {
        let (code, out, _) = run(&["summarize", &fixture("iter_demo"), "--method", method]);
        assert_eq!(code, 0, "{method}: {out}");
        assert!(out.contains("done: n0.go·n.a*·n.b·nf.done"), "{method}: {out}");
    }
    let (code, _, _) = run(&["summarize", &fixture("fdm_unsound"), "--method", "states"]);
    assert_eq!(code, 1);
}

#[test]
fn reduce_writes_a_trace_file() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.log");
    let (code, out, _) = run(&["reduce", &fixture("running_multi"), "--trace", trace.to_str().unwrap()]);
    assert_eq!(code, 0, "{out}");
    let text = std::fs::read_to_string(&trace).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(!lines.is_empty());
    assert!(lines[0].starts_with("k=1 rule="));
    assert!(lines.last().unwrap().ends_with(&format!("total={}", lines.len())));
}

#[test]
fn reduce_rejects_unsupported_classes() {
    let (code, _, err) = run(&["reduce", &fixture("shortcut_problem")]);
    assert_eq!(code, 2);
    assert!(err.contains("error"));
}

#[test]
fn gen_output_is_a_sound_negotiation() {
    let (code, out, _) = run(&["gen", "--seed", "7", "--steps", "9", "--states", "2"]);
    assert_eq!(code, 0);
    let n = io::parse_str(&out).unwrap();
    assert!(n.is_deterministic());
    assert!(negotiation::semantics::check_soundness(&n, 100_000).unwrap().sound);
    let (_, again, _) = run(&["gen", "--seed", "7", "--steps", "9", "--states", "2"]);
    assert_eq!(out, again);
    let (_, acyclic, _) = run(&["gen", "--seed", "7", "--steps", "9", "--acyclic"]);
    assert!(io::parse_str(&acyclic).unwrap().graph().is_acyclic());
}

#[test]
fn fixture_and_dot_commands() {
    let (code, out, _) = run(&["fixture", "ladder"]);
    assert_eq!(code, 0);
    assert!(io::parse_str(&out).is_ok());
    let (code, _, err) = run(&["fixture", "nope"]);
    assert_eq!(code, 2);
    assert!(err.contains("ladder"));
    let (code, out, _) = run(&["dot", &fixture("fdm_acyclic")]);
    assert_eq!(code, 0);
    assert!(out.starts_with("digraph"));
    let (code, out, _) = run(&["reach", &fixture("ladder"), "--dot"]);
    assert_eq!(code, 0);
    assert!(out.starts_with("digraph"));
    let (code, out, _) = run(&["reach", &fixture("ladder")]);
    assert_eq!(code, 0);
    assert!(out.contains("markings: 7"), "{out}");
}

#[test]
fn diag_lists_fragments_and_loops() {
    let (code, out, _) = run(&["diag", &fixture("running_multi"), "--loops"]);
    assert_eq!(code, 0);
    assert!(out.contains("minimal loop"));
    assert!(!out.contains("dominated by none"), "{out}");
    let (code, out, _) = run(&["diag", &fixture("running_multi"), "--fragments"]);
    assert_eq!(code, 0);
    assert!(out.contains("fragment n1: atoms {n1,n2,n3,n4,n5}"), "{out}");
}

#[test]
fn expfam_demo_reports_counts() {
    let (code, out, _) = run(&["demo", "expfam", "--k", "3", "--strategy", "alternating"]);
    assert_eq!(code, 0);
    assert!(out.contains("applications: 16"), "{out}");
    let (code, out, _) = run(&["demo", "expfam", "--k", "3", "--strategy", "initial"]);
    assert_eq!(code, 0);
    assert!(out.contains("peak results at n0: 8"), "{out}");
}

#[test]
fn binary_exit_code_matches() {
    let bin = env!("CARGO_BIN_EXE_negotiate");
    let status = Command::new(bin).args(["check", &fixture("fdm_unsound")]).status().unwrap();
    assert_eq!(status.code(), Some(1));
    let status = Command::new(bin).args(["check", &fixture("fdm_acyclic")]).status().unwrap();
    assert_eq!(status.code(), Some(0));
    let out = Command::new(bin).arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
}
