use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/fixtures")
        .join(name)
}

fn facetalk() -> Command {
    Command::new(env!("CARGO_BIN_EXE_facetalk"))
}

fn engine_args(cmd: &mut Command) -> &mut Command {
    cmd.arg("--schema")
        .arg(fixture("schema.json"))
        .arg("--lexicon")
        .arg(fixture("lexicon.json"))
        .arg("--catalog")
        .arg(fixture("catalog.json"))
}

#[test]
fn parse_prints_result_json() {
    let out = facetalk()
        .args(["parse", "--category", "shoes"])
        .arg("--schema")
        .arg(fixture("schema.json"))
        .arg("--lexicon")
        .arg(fixture("lexicon.json"))
        .arg("not white")
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    let v: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["intents"][0]["predicate_type"], "NOT_EQUALS");
    assert_eq!(v["intents"][0]["value"]["tag"]["tag"], "white");
    let order: Vec<usize> = [
        "\"intents\"",
        "\"category_decision\"",
        "\"dialog_act\"",
        "\"unparsed\"",
    ]
    .iter()
    .map(|k| text.find(k).unwrap())
    .collect();
    assert!(order.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn parse_accepts_context_json() {
    let out = facetalk()
        .arg("parse")
        .arg("--schema")
        .arg(fixture("schema.json"))
        .arg("--lexicon")
        .arg(fixture("lexicon.json"))
        .args([
            "--context",
            r#"{"active_category":"shoes","last_touched_facet":"size"}"#,
            "bigger",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["intents"][0]["operator"], "NUDGE_FACET");
    assert_eq!(v["intents"][0]["facet"], "size");
}

#[test]
fn gen_then_eval_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.jsonl");
    let out = facetalk()
        .arg("gen")
        .arg("--grammar")
        .arg(fixture("grammar.json"))
        .arg("--schema")
        .arg(fixture("schema.json"))
        .arg("--lexicon")
        .arg(fixture("lexicon.json"))
        .args(["-n", "300", "--seed", "3", "--out"])
        .arg(&corpus)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::fs::read_to_string(&corpus).unwrap();
    assert_eq!(text.lines().count(), 300);
    let first: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    for key in ["text", "intents", "weight"] {
        assert!(first.get(key).is_some(), "{key}");
    }

    let eval = |path: &Path| {
        facetalk()
            .arg("eval")
            .arg("--corpus")
            .arg(path)
            .arg("--schema")
            .arg(fixture("schema.json"))
            .arg("--lexicon")
            .arg(fixture("lexicon.json"))
            .output()
            .unwrap()
    };
    let out = eval(&corpus);
    assert!(out.status.success());
    let summary: Value = serde_json::from_str(
        String::from_utf8(out.stdout)
            .unwrap()
            .lines()
            .last()
            .unwrap(),
    )
    .unwrap();
    assert_eq!(summary["total"], 300);
    assert_eq!(summary["exact_match"], 300);

    let mut lines: Vec<Value> = text
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    lines[0]["intents"] = Value::Array(vec![]);
    let broken = dir.path().join("broken.jsonl");
    let body: Vec<String> = lines.iter().map(|l| l.to_string()).collect();
    std::fs::write(&broken, body.join("\n")).unwrap();
    let out = eval(&broken);
    assert_eq!(out.status.code(), Some(1));
    let stdout = String::from_utf8(out.stdout).unwrap();
    let summary: Value = serde_json::from_str(stdout.lines().last().unwrap()).unwrap();
    assert_eq!(summary["exact_match"], 299);
}

#[test]
fn gen_is_seed_deterministic() {
    let run = |seed: &str| {
        facetalk()
            .arg("gen")
            .arg("--grammar")
            .arg(fixture("grammar.json"))
            .arg("--schema")
            .arg(fixture("schema.json"))
            .args(["-n", "20", "--seed", seed])
            .output()
            .unwrap()
            .stdout
    };
    assert_eq!(run("5"), run("5"));
    assert_ne!(run("5"), run("6"));
}

#[test]
fn repl_prints_summary_and_products() {
    let mut child = engine_args(facetalk().arg("repl"))
        .args(["--top-k", "2"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"nike shoes\n\nnot white\n:quit\nred\n")
        .unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("[1] shoes · brand: nike"), "{text}");
    assert!(
        text.contains("[2] shoes · brand: nike · color: not white"),
        "{text}"
    );
    assert!(!text.contains("[3]"));
    assert!(text.lines().any(|l| l.starts_with("  shoe-")));
}

#[test]
fn missing_file_is_reported() {
    let out = facetalk()
        .args([
            "parse",
            "--schema",
            "/nonexistent.json",
            "--lexicon",
            "/nonexistent.json",
            "red",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent.json"));
}

fn http(addr: &str, request: &str) -> String {
    let mut stream = TcpStream::connect(addr).unwrap();
    stream.write_all(request.as_bytes()).unwrap();
    let mut response = String::new();
    stream.read_to_string(&mut response).unwrap();
    response
}

#[test]
fn serve_binds_and_serves_ui_and_api() {
    let mut child = engine_args(facetalk().arg("serve"))
        .args(["--port", "0", "--page-size", "3", "--ui-dir"])
        .arg(Path::new(env!("CARGO_MANIFEST_DIR")).join("ui"))
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stderr.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let addr = line
        .trim()
        .strip_prefix("listening on http://")
        .unwrap()
        .to_owned();

    let index = http(
        &addr,
        "GET / HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n",
    );
    assert!(index.starts_with("HTTP/1.1 200"), "{index}");
    assert!(index.contains("app.js"));

    let created = http(
        &addr,
        "POST /v1/sessions HTTP/1.1\r\nHost: x\r\nContent-Length: 0\r\nConnection: close\r\n\r\n",
    );
    assert!(created.starts_with("HTTP/1.1 201"), "{created}");
    let body: Value = serde_json::from_str(created.split("\r\n\r\n").nth(1).unwrap()).unwrap();
    let id = body["session_id"].as_str().unwrap();

    let payload = r#"{"text":"shoes"}"#;
    let turn = http(
        &addr,
        &format!(
            "POST /v1/sessions/{id}/utterances HTTP/1.1\r\nHost: x\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
            payload.len()
        ),
    );
    assert!(turn.starts_with("HTTP/1.1 200"), "{turn}");
    let body: Value = serde_json::from_str(turn.split("\r\n\r\n").nth(1).unwrap()).unwrap();
    assert_eq!(body["products"].as_array().unwrap().len(), 3);
    child.kill().unwrap();
    child.wait().unwrap();
}

#[test]
fn serve_rejects_missing_ui_dir() {
    let out = engine_args(facetalk().arg("serve"))
        .args(["--port", "0", "--ui-dir", "/definitely/not/here"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
