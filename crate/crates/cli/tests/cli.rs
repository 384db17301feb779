use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

fn lockbox(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lockbox")).args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const PLAN: &str = r#"{
  "agent_spec": {"name": "loop_prone", "params": {"repeat_bias": 0.9, "window": 3}},
  "flip_grid": [0.0, 0.2, 0.4],
  "repetitions": 3,
  "trials_per_repetition": 8,
  "master_seed": 5
}"#;

#[test]
fn sweep_analyze_fit_report_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let plan = write(dir.path(), "plan.json", PLAN);
    let log = dir.path().join("log.jsonl");
    let out = lockbox(&["sweep", "--config", s(&plan), "--out", s(&log), "--jobs", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 3);
    assert!(stdout
        .lines()
        .all(|l| l.contains("trials=24") && l.contains("success_rate=")));

    let analysis = dir.path().join("analysis.json");
    assert!(lockbox(&["analyze", "--log", s(&log), "--out", s(&analysis)])
        .status
        .success());
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&analysis).unwrap()).unwrap();
    assert_eq!(report["n_records"], 72);
    assert_eq!(report["conditions"]["0.4"]["n_trials"], 24);

    let fit = dir.path().join("fit.json");
    let csv = dir.path().join("fit.csv");
    let out = lockbox(&[
        "fit",
        "--log",
        s(&log),
        "--out",
        s(&fit),
        "--csv",
        s(&csv),
        "--max-order",
        "2",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv_text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(csv_text.lines().next(), Some("x,y,fitted"));
    assert_eq!(csv_text.lines().count(), 1 + 9);

    let out = lockbox(&["report", "--analysis", s(&analysis)]);
    assert!(out.status.success());
    assert!(String::from_utf8(out.stdout).unwrap().contains("pearson"));
}

#[test]
fn seed_override_changes_and_reproduces_logs() {
    let dir = tempfile::tempdir().unwrap();
    let plan = write(dir.path(), "plan.json", PLAN);
    let run = |seed: &str, name: &str| {
        let log = dir.path().join(name);
        assert!(
            lockbox(&["sweep", "--config", s(&plan), "--out", s(&log), "--seed", seed])
                .status
                .success()
        );
        std::fs::read_to_string(log)
            .unwrap()
            .lines()
            .map(|l| {
                let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
                v.as_object_mut().unwrap().remove("started_unix_ms");
                v
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(run("9", "a.jsonl"), run("9", "b.jsonl"));
    assert_ne!(run("9", "a.jsonl"), run("10", "c.jsonl"));
}

#[test]
fn single_run_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let plan = write(dir.path(), "plan.json", PLAN);
    let log = dir.path().join("one.jsonl");
    let out = lockbox(&[
        "run",
        "--config",
        s(&plan),
        "--agent",
        "heuristic",
        "--flip-p",
        "0",
        "--out",
        s(&log),
    ]);
    assert!(out.status.success());
    assert!(String::from_utf8(out.stdout).unwrap().contains("success=true steps=9"));
    assert_eq!(std::fs::read_to_string(log).unwrap().lines().count(), 2);
    assert_eq!(
        lockbox(&["run", "--config", s(&plan), "--flip-p", "1.5"]).status.code(),
        Some(2)
    );
    assert_eq!(
        lockbox(&["run", "--config", s(&plan), "--agent", "oracle"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn malformed_plan_reports_byte_offset() {
    let dir = tempfile::tempdir().unwrap();
    let text = "{\"agent_spec\": {\"name\": \"random\"}, \"flip_grid\": [0.1 0.2]}";
    let plan = write(dir.path(), "bad.json", text);
    let out = lockbox(&["validate-config", "--config", s(&plan)]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8(out.stderr).unwrap();
    let offset = text.find("0.2").unwrap();
    assert!(stderr.contains(&format!("byte offset {offset}")), "{stderr}");
}

#[test]
fn validate_config_agrees_with_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let variants = [
        (PLAN.to_string(), true),
        (PLAN.replace("0.4]", "1.4]"), false),
        (PLAN.replace("0.4]", "0.2]"), false),
        (PLAN.replace("\"repetitions\": 3", "\"repetitions\": 0"), false),
        (PLAN.replace("loop_prone", "psychic"), false),
        (PLAN.replace("\"window\": 3", "\"window\": 2"), false),
        (
            PLAN.replace("\"master_seed\": 5", "\"master_seed\": 5, \"colour\": 1"),
            false,
        ),
        (
            PLAN.replace(
                "\"master_seed\": 5",
                "\"master_seed\": 5, \"config_ref\": \"nope.json\"",
            ),
            false,
        ),
        (
            PLAN.replace(
                r#"{"name": "loop_prone", "params": {"repeat_bias": 0.9, "window": 3}}"#,
                r#"{"name": "scripted", "params": {"script": ["L4", "L9"]}}"#,
            ),
            false,
        ),
    ];
    for (i, (text, valid)) in variants.iter().enumerate() {
        let plan = write(dir.path(), &format!("p{i}.json"), text);
        let log = dir.path().join(format!("p{i}.jsonl"));
        let validated = lockbox(&["validate-config", "--config", s(&plan)]).status.code();
        let swept = lockbox(&["sweep", "--config", s(&plan), "--out", s(&log)])
            .status
            .code();
        assert_eq!(validated, swept, "variant {i}");
        assert_eq!(validated == Some(0), *valid, "variant {i}");
        if !valid {
            assert_eq!(validated, Some(2), "variant {i}");
        }
    }
}

#[test]
fn io_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let plan = write(dir.path(), "plan.json", PLAN);
    let missing = dir.path().join("missing.json");
    assert_eq!(
        lockbox(&["validate-config", "--config", s(&missing)]).status.code(),
        Some(3)
    );
    let out = lockbox(&[
        "sweep",
        "--config",
        s(&plan),
        "--out",
        s(&dir.path().join("no/such/dir.jsonl")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(
        lockbox(&["analyze", "--log", s(&missing), "--out", s(&plan)])
            .status
            .code(),
        Some(3)
    );
}

#[test]
fn schema_mismatch_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let log = write(dir.path(), "old.jsonl", "{\"schema\":\"lockbox-probe/0\"}\n");
    let out = lockbox(&["analyze", "--log", s(&log), "--out", s(&dir.path().join("a.json"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("schema mismatch"));
}

fn llm_plan(base_url: &str, key_env: &str) -> String {
    format!(
        r#"{{"agent_spec": {{"name": "llm", "params": {{"base_url": "{base_url}", "model_name": "m",
            "api_key_env": "{key_env}", "timeout": 5, "max_retries": 1, "backoff_ms": 1}}}},
            "flip_grid": [0.0], "repetitions": 1, "trials_per_repetition": 1, "master_seed": 1}}"#
    )
}

#[test]
fn llm_plan_without_credential_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let plan = write(
        dir.path(),
        "llm.json",
        &llm_plan("http://127.0.0.1:9/v1", "LOCKBOX_CLI_TEST_UNSET_KEY"),
    );
    let out = lockbox(&["validate-config", "--config", s(&plan)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr)
        .unwrap()
        .contains("LOCKBOX_CLI_TEST_UNSET_KEY"));
}

#[test]
fn transport_exhaustion_exits_4() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        for stream in listener.incoming().flatten() {
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap_or(0);
                }
            }
            let mut body = vec![0; len];
            let _ = reader.read_exact(&mut body);
            let mut stream = stream;
            let _ = stream.write_all(b"HTTP/1.1 503 Busy\r\nContent-Length: 0\r\nConnection: close\r\n\r\n");
        }
    });
    let dir = tempfile::tempdir().unwrap();
    let plan = write(
        dir.path(),
        "llm.json",
        &llm_plan(&format!("http://{addr}/v1"), "LOCKBOX_CLI_TEST_KEY"),
    );
    let log = dir.path().join("llm.jsonl");
    let out = Command::new(env!("CARGO_BIN_EXE_lockbox"))
        .args(["sweep", "--config", s(&plan), "--out", s(&log)])
        .env("LOCKBOX_CLI_TEST_KEY", "k")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    // the aborted trial is still logged
    assert_eq!(std::fs::read_to_string(log).unwrap().lines().count(), 2);
}

fn play(input: &str) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_lockbox"))
        .arg("play")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

#[test]
fn play_solves_reprompts_and_quits() {
    let out = play("L4\nwrench\nl3\nL2\nL1\n");
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("unknown joint `wrench`"));
    assert!(text.contains("Solved at step 4."));

    let out = play("L2\n");
    assert!(out.status.success());
    assert!(!String::from_utf8(out.stdout).unwrap().contains("Solved"));
}
