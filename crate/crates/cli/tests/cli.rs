// SPDX-License-Identifier: Apache-2.0

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::thread;

use n2g_core::model::write_records;
use n2g_core::{ActivationRecord, NeuronRef, Token};
use serde_json::{json, Value};

const SPEC: &str = r#"{"rules": [
    {"activating": "except", "context": ["case"], "strength": 2.0},
    {"activating": "w3", "context": ["w1", "*"], "strength": 1.5}
]}"#;

fn n2g(dir: &Path, args: &[&str], stdin: &str) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_n2g"))
        .current_dir(dir)
        .args(args)
        .env_remove("N2G_BACKEND_URL")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    // The child may exit before reading stdin.
    let _ = child.stdin.take().unwrap().write_all(stdin.as_bytes());
    child.wait_with_output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn ok(o: Output) -> Output {
    assert!(o.status.success(), "n2g failed: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn record(neuron: NeuronRef, words: &str, acts: &[f64]) -> ActivationRecord {
    let tokens: Vec<Token> = words.split_whitespace().map(|w| Token::new(w).unwrap()).collect();
    ActivationRecord::new(neuron, tokens, acts.to_vec()).unwrap()
}

/// Fixture directory with `spec.json` and a 20-record corpus for neuron 1:2.
fn fixture() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("spec.json"), SPEC).unwrap();
    ok(n2g(
        dir.path(),
        &["synth", "--spec", "spec.json", "--neuron", "1:2", "--prompts", "20", "--seed", "4", "--out", "records.jsonl"],
        "",
    ));
    dir
}

fn build(dir: &Path, out: &str, extra: &[&str]) -> Output {
    let mut args = vec![
        "build", "--records", "records.jsonl", "--backend", "synthetic:spec.json", "--neuron", "1:2", "--out", out,
    ];
    args.extend_from_slice(extra);
    n2g(dir, &args, "")
}

#[test]
fn build_writes_all_artifacts() {
    let dir = fixture();
    ok(build(dir.path(), "out", &[]));
    let out = dir.path().join("out");
    for f in ["trie.json", "graph.dot", "build_log.json", "train.jsonl", "test.jsonl", "manifest.json"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let log: Value = serde_json::from_str(&fs::read_to_string(out.join("build_log.json")).unwrap()).unwrap();
    assert_eq!(log["within_query_bound"], true);
    assert!(log["total_queries"].as_u64().unwrap() > 0);
    assert!(fs::read_to_string(out.join("graph.dot")).unwrap().starts_with("digraph {"));
    let train = fs::read_to_string(out.join("train.jsonl")).unwrap().lines().count();
    let test = fs::read_to_string(out.join("test.jsonl")).unwrap().lines().count();
    assert_eq!((train, test), (10, 10));
}

#[test]
fn jobs_do_not_change_outputs() {
    let dir = fixture();
    ok(build(dir.path(), "one", &["--jobs", "1"]));
    ok(build(dir.path(), "many", &["--jobs", "8"]));
    for f in ["trie.json", "graph.dot", "build_log.json", "train.jsonl", "test.jsonl"] {
        assert_eq!(
            fs::read(dir.path().join("one").join(f)).unwrap(),
            fs::read(dir.path().join("many").join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn seed_changes_the_split() {
    let dir = fixture();
    ok(build(dir.path(), "a", &["--seed", "1"]));
    ok(build(dir.path(), "b", &["--seed", "2"]));
    assert_ne!(
        fs::read(dir.path().join("a/train.jsonl")).unwrap(),
        fs::read(dir.path().join("b/train.jsonl")).unwrap()
    );
}

#[test]
fn config_flags_reach_the_trie() {
    let dir = fixture();
    ok(build(dir.path(), "out", &["--firing-threshold", "0.3", "--top-n", "2"]));
    let trie: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("out/trie.json")).unwrap()).unwrap();
    assert_eq!(trie["config"]["firing_threshold"], 0.3);
    assert_eq!(trie["config"]["top_n_substitutes"], 2);

    let o = build(dir.path(), "bad", &["--recovery-fraction", "1.5"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn builds_every_neuron_without_neuron_flag() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("spec.json"), SPEC).unwrap();
    let mut records = Vec::new();
    for n in [NeuronRef::new(1, 2), NeuronRef::new(0, 5)] {
        records.push(record(n, "a case except", &[0.0, 0.0, 2.0]));
        records.push(record(n, "b w1 x w3", &[0.0, 0.0, 0.0, 1.5]));
    }
    let mut jsonl = Vec::new();
    write_records(&mut jsonl, &records).unwrap();
    fs::write(dir.path().join("records.jsonl"), jsonl).unwrap();
    ok(n2g(
        dir.path(),
        &["build", "--records", "records.jsonl", "--backend", "synthetic:spec.json", "--out", "out", "--jobs", "2"],
        "",
    ));
    for sub in ["0_5", "1_2"] {
        assert!(dir.path().join("out").join(sub).join("trie.json").is_file());
    }
}

#[test]
fn input_errors_exit_2() {
    let dir = fixture();
    let o = n2g(
        dir.path(),
        &["build", "--records", "nope.jsonl", "--backend", "synthetic:spec.json", "--neuron", "1:2", "--out", "o"],
        "",
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(!o.stderr.is_empty());

    fs::write(dir.path().join("bad.json"), "{\"rules\": []}").unwrap();
    let o = n2g(
        dir.path(),
        &["build", "--records", "records.jsonl", "--backend", "synthetic:bad.json", "--neuron", "1:2", "--out", "o"],
        "",
    );
    assert_eq!(o.status.code(), Some(2));

    fs::write(dir.path().join("broken.jsonl"), "{\"neuron\": 3}\n").unwrap();
    let o = n2g(
        dir.path(),
        &["build", "--records", "broken.jsonl", "--backend", "synthetic:spec.json", "--neuron", "1:2", "--out", "o"],
        "",
    );
    assert_eq!(o.status.code(), Some(2));

    let o = n2g(dir.path(), &["build", "--records", "records.jsonl", "--neuron", "1:2", "--out", "o"], "");
    assert_eq!(o.status.code(), Some(2), "no backend configured");

    let o = build(dir.path(), "o", &["--neuron", "7:7"]);
    assert_eq!(o.status.code(), Some(2), "no records for the neuron");
}

#[test]
fn unreachable_backend_exits_3() {
    let dir = fixture();
    let o = n2g(
        dir.path(),
        &["build", "--records", "records.jsonl", "--backend", "remote:http://127.0.0.1:9", "--neuron", "1:2", "--out", "o"],
        "",
    );
    assert_eq!(o.status.code(), Some(3));
}

/// Minimal model service: `except` fires after `case` (2.0) or `cases`
/// (1.6); the substitution model proposes `cases` for `case`.
fn mock_service() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { break };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let path = line.split_whitespace().nth(1).unwrap_or("").to_owned();
            let mut len = 0;
            loop {
                let mut h = String::new();
                reader.read_line(&mut h).unwrap();
                if h.trim().is_empty() {
                    break;
                }
                if let Some((k, v)) = h.split_once(':') {
                    if k.eq_ignore_ascii_case("content-length") {
                        len = v.trim().parse().unwrap();
                    }
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            let body: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
            let (status, resp) = match path.as_str() {
                "/v1/mask_token" => (200, json!({"token": "<pad>"})),
                "/v1/activations" if body["layer"] == 1 && body["index"] == 2 => {
                    let toks: Vec<&str> = body["tokens"].as_array().unwrap().iter().map(|t| t.as_str().unwrap()).collect();
                    let acts: Vec<f64> = (0..toks.len())
                        .map(|i| match (i.checked_sub(1).map(|p| toks[p]), toks[i]) {
                            (Some("case"), "except") => 2.0,
                            (Some("cases"), "except") => 1.6,
                            _ => 0.0,
                        })
                        .collect();
                    (200, json!({"activations": acts}))
                }
                "/v1/substitutes" => {
                    let pos = body["position"].as_u64().unwrap() as usize;
                    let cands = if body["tokens"][pos] == "case" {
                        json!([{"token": "cases", "prob": 0.4}, {"token": "point", "prob": 0.01}])
                    } else {
                        json!([])
                    };
                    (200, json!({"candidates": cands}))
                }
                _ => (404, json!({"error": "not found"})),
            };
            let text = resp.to_string();
            let _ = write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                text.len()
            );
        }
    });
    url
}

fn write_except_records(dir: &Path) {
    let n = NeuronRef::new(1, 2);
    let records = vec![
        record(n, "in any case except this", &[0.0, 0.0, 0.0, 2.0, 0.0]),
        record(n, "nothing fires here", &[0.0, 0.0, 0.0]),
        record(n, "the case except", &[0.0, 0.0, 2.0]),
        record(n, "case except .", &[0.0, 2.0, 0.0]),
    ];
    let mut jsonl = Vec::new();
    write_records(&mut jsonl, &records).unwrap();
    fs::write(dir.join("records.jsonl"), jsonl).unwrap();
}

#[test]
fn remote_backend_end_to_end() {
    let url = mock_service();
    let dir = tempfile::tempdir().unwrap();
    write_except_records(dir.path());
    let backend = format!("remote:{url}");
    ok(n2g(
        dir.path(),
        &["build", "--records", "records.jsonl", "--backend", &backend, "--neuron", "1:2", "--out", "out", "--jobs", "3"],
        "",
    ));
    let log: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("out/build_log.json")).unwrap()).unwrap();
    assert!(log["augmented_examples"].as_u64().unwrap() >= 1);
    assert_eq!(log["within_query_bound"], true);

    let o = ok(n2g(dir.path(), &["predict", "--trie", "out/trie.json"], "so cases except point except"));
    let text = stdout(&o);
    let values: Vec<&str> = text.lines().map(|l| l.split('\t').nth(1).unwrap()).collect();
    assert_eq!(values, ["0.000000", "0.000000", "0.800000", "0.000000", "0.000000"]);

    let o = ok(n2g(
        dir.path(),
        &["eval", "--trie", "out/trie.json", "--records", "out/test.jsonl", "--report", "report.csv"],
        "",
    ));
    assert!(stdout(&o).contains("Firing Tokens"));
}

#[test]
fn backend_url_comes_from_environment() {
    let url = mock_service();
    let dir = tempfile::tempdir().unwrap();
    write_except_records(dir.path());
    let o = Command::new(env!("CARGO_BIN_EXE_n2g"))
        .current_dir(dir.path())
        .args(["build", "--records", "records.jsonl", "--neuron", "1:2", "--out", "out", "--no-augment"])
        .env("N2G_BACKEND_URL", &url)
        .output()
        .unwrap();
    ok(o);
    let manifest: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["backend"], json!({"kind": "remote", "url": url}));
}

#[test]
fn unknown_remote_neuron_exits_3() {
    let url = mock_service();
    let dir = tempfile::tempdir().unwrap();
    let records = vec![
        record(NeuronRef::new(4, 4), "case except", &[0.0, 2.0]),
        record(NeuronRef::new(4, 4), "case except", &[0.0, 2.0]),
    ];
    let mut jsonl = Vec::new();
    write_records(&mut jsonl, &records).unwrap();
    fs::write(dir.path().join("records.jsonl"), jsonl).unwrap();
    let backend = format!("remote:{url}");
    let o = n2g(
        dir.path(),
        &["build", "--records", "records.jsonl", "--backend", &backend, "--neuron", "4:4", "--out", "out"],
        "",
    );
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn eval_reports_exact_recovery_and_schema() {
    let dir = fixture();
    ok(build(dir.path(), "out", &[]));
    let o = ok(n2g(
        dir.path(),
        &["eval", "--trie", "out/trie.json", "--records", "out/test.jsonl", "--report", "report.csv"],
        "",
    ));
    assert!(stdout(&o).contains("Non-Firing Tokens"));
    let report = fs::read_to_string(dir.path().join("report.csv")).unwrap();
    let mut lines = report.lines();
    assert_eq!(
        lines.next().unwrap(),
        "layer,neuron,tp,fp,fn,tn,P_fire,R_fire,F1_fire,P_nofire,R_nofire,F1_nofire"
    );
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&row[..2], ["1", "2"]);
    assert_eq!(row[8], "1.000000");
    assert_eq!(row[11], "1.000000");
    let kinds: Vec<&str> = lines.map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(kinds, ["macro", "pooled"]);

    let o = ok(n2g(dir.path(), &["eval", "--trie", "out/trie.json", "--records", "out/test.jsonl"], ""));
    assert!(stdout(&o).starts_with("layer,neuron,"));
}

#[test]
fn eval_on_empty_test_set_exits_2() {
    let dir = fixture();
    ok(build(dir.path(), "out", &[]));
    fs::write(dir.path().join("empty.jsonl"), "").unwrap();
    let o = n2g(dir.path(), &["eval", "--trie", "out/trie.json", "--records", "empty.jsonl"], "");
    assert_eq!(o.status.code(), Some(2));
}

/// Trie for `except` after `case`, built through the CLI.
fn except_trie(dir: &Path) {
    fs::write(dir.join("spec.json"), SPEC).unwrap();
    write_except_records(dir);
    ok(n2g(
        dir,
        &["build", "--records", "records.jsonl", "--backend", "synthetic:spec.json", "--neuron", "1:2", "--out", "out"],
        "",
    ));
}

#[test]
fn predict_fires_on_except() {
    let dir = tempfile::tempdir().unwrap();
    except_trie(dir.path());
    let o = ok(n2g(dir.path(), &["predict", "--trie", "out/trie.json"], "no exception in this case except\n"));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 6);
    assert_eq!(lines[0], "no\t0.000000");
    assert_eq!(lines[4], "case\t0.000000");
    assert_eq!(lines[5], "except\t1.000000");

    let o = ok(n2g(dir.path(), &["predict", "--trie", "out/trie.json"], ""));
    assert!(o.stdout.is_empty());

    let o = ok(n2g(dir.path(), &["predict", "--trie", "out/trie.json", "--lines"], "case\nexcept\n"));
    assert_eq!(stdout(&o), "case\t0.000000\nexcept\t1.000000\n");
}

#[test]
fn predict_rejects_malformed_trie() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("trie.json"), "{\"version\": 99}").unwrap();
    let o = n2g(dir.path(), &["predict", "--trie", "trie.json"], "a b");
    assert_eq!(o.status.code(), Some(2));
    let o = n2g(dir.path(), &["predict", "--trie", "missing.json"], "a b");
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn viz_writes_dot_and_structure() {
    let dir = tempfile::tempdir().unwrap();
    except_trie(dir.path());
    let o = ok(n2g(dir.path(), &["viz", "--trie", "out/trie.json", "--out", "g.dot"], ""));
    assert_eq!(
        fs::read_to_string(dir.path().join("g.dot")).unwrap(),
        fs::read_to_string(dir.path().join("out/graph.dot")).unwrap()
    );
    assert!(stdout(&o).contains("component 0"));
}
