mod common;

use std::fs;
use std::process::{Command, Output};

use common::scenario_path;
use serde_json::Value as Json;

fn lab(args: &[&str]) -> Output {
    lab_with_env(args, &[])
}

fn lab_with_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_consensus-lab"));
    cmd.args(args).env_remove("CONSENSUS_LAB_STEP_LIMIT");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn scenario(name: &str) -> String {
    scenario_path(name).to_string_lossy().into_owned()
}

#[test]
fn run_writes_trace_and_verdict_files() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.jsonl");
    let verdict = dir.path().join("v.json");
    let out = lab(&[
        "run",
        "--scenario",
        &scenario("hbft_paper_violation"),
        "--trace",
        trace.to_str().unwrap(),
        "--verdict",
        verdict.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));

    let text = fs::read_to_string(&trace).unwrap();
    let lines: Vec<Json> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(lines.len() > 10);
    let last = lines.last().unwrap();
    assert_eq!(last["verdict"]["agreement"]["status"], "VIOLATED");
    assert!(lines[..lines.len() - 1].iter().all(|l| l.get("step").is_some()));

    let v: Json = serde_json::from_str(&fs::read_to_string(&verdict).unwrap()).unwrap();
    assert_eq!(&v, last);
    assert_eq!(stdout(&out).trim(), fs::read_to_string(&verdict).unwrap().trim());
}

#[test]
fn run_exit_codes_follow_the_verdict() {
    for (name, code) in [
        ("hbft_paper_violation", 2),
        ("fab_baseline", 0),
        ("hbft_unanimous", 0),
        ("fab_unanimous", 0),
    ] {
        let out = lab(&["run", "--scenario", &scenario(name)]);
        assert_eq!(out.status.code(), Some(code), "{name}: {}", stderr(&out));
    }
}

#[test]
fn pretty_prints_a_narrative() {
    let out = lab(&["run", "--scenario", &scenario("hbft_paper_violation"), "--pretty"]);
    let text = stdout(&out);
    assert!(text.contains("*** i3 COMMITS a at s1 in v1"), "{text}");
    assert!(text.contains("agreement: VIOLATED"));
    assert!(text.lines().last().unwrap().starts_with("{\"verdict\""));
}

#[test]
fn schema_errors_name_the_line_and_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(
        &path,
        "{\n  \"schema\": \"consensus-lab/scenario/v1\",\n  \"protocol\": \"hbft\",\n  \"f\": 1,\n  \"n_replicas\": 4,\n  \"seq\": 1,\n  \"initial_proposals\": [{\"view\": 1, \"value\": \"a\", \"colour\": 3}]\n}\n",
    )
    .unwrap();
    let out = lab(&["run", "--scenario", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("line 7"), "{err}");
    assert!(err.contains("initial_proposals[0]"), "{err}");
}

#[test]
fn input_errors_exit_1() {
    let missing = lab(&["run", "--scenario", "/nonexistent/scenario.json"]);
    assert_eq!(missing.status.code(), Some(1));

    let bad_env = lab_with_env(
        &["run", "--scenario", &scenario("hbft_unanimous")],
        &[("CONSENSUS_LAB_STEP_LIMIT", "lots")],
    );
    assert_eq!(bad_env.status.code(), Some(1));
    assert!(stderr(&bad_env).contains("CONSENSUS_LAB_STEP_LIMIT"));

    assert_eq!(lab(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(
        lab(&["explore", "--protocol", "pbft", "--f", "1"]).status.code(),
        Some(1)
    );
    assert_eq!(
        lab(&["explore", "--protocol", "hbft", "--f", "1", "--n", "3"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        lab(&["explore", "--protocol", "hbft", "--f", "1", "--max-steps", "0"])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn step_limit_comes_from_the_environment() {
    let out = lab_with_env(
        &["run", "--scenario", &scenario("hbft_unanimous")],
        &[("CONSENSUS_LAB_STEP_LIMIT", "3")],
    );
    let v: Json = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert_eq!(v["verdict"]["metadata"]["step_limit_exceeded"], true);
    assert_eq!(v["verdict"]["metadata"]["steps"], 3);
}

#[test]
fn explore_without_faults_is_clean() {
    for protocol in ["hbft", "fab"] {
        let out = lab(&["explore", "--protocol", protocol, "--f", "0"]);
        assert_eq!(out.status.code(), Some(0), "{protocol}");
        assert!(stdout(&out).contains("NONE_WITHIN_BOUNDS"));
    }
}

#[test]
fn explore_witness_replays_through_run() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("witness.json");
    let out = lab(&[
        "explore",
        "--protocol",
        "hbft",
        "--f",
        "1",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stdout(&out).contains("FOUND"));
    let replay = lab(&["run", "--scenario", out_path.to_str().unwrap()]);
    assert_eq!(replay.status.code(), Some(2));
}

#[test]
fn check_quorum_refuses_large_f() {
    let out = lab(&["check-quorum", "--f", "3"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("refusing"));
    assert_eq!(lab(&["check-quorum", "--f", "0"]).status.code(), Some(0));
}
