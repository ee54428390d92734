use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn qmerkle(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qmerkle"))
        .args(args)
        .env_remove("QMT_MAX_QUBITS")
        .output()
        .expect("binary runs")
}

fn stdout(args: &[&str]) -> String {
    let out = qmerkle(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn instances() -> (TempDir, PathBuf) {
    let dir = TempDir::new().unwrap();
    qmerkle_core::library::write_all(dir.path()).unwrap();
    let path = dir.path().to_path_buf();
    (dir, path)
}

fn instance(dir: &Path, name: &str) -> String {
    dir.join(name).display().to_string()
}

struct Parsed {
    config: Value,
    rows: Vec<Value>,
    summary: Value,
}

/// Reads the CSV layout back into JSON values, converting fields by the
/// types seen in the JSON-lines rendering of the same run.
fn parse_csv(text: &str, like: &[Value]) -> Parsed {
    let mut lines = text.lines();
    let config = serde_json::from_str(lines.next().unwrap().strip_prefix("# config ").unwrap()).unwrap();
    let mut body = String::new();
    let mut summary = Value::Null;
    for line in lines {
        if let Some(s) = line.strip_prefix("# summary ") {
            summary = serde_json::from_str(s).unwrap();
        } else {
            body.push_str(line);
            body.push('\n');
        }
    }
    let mut reader = csv::Reader::from_reader(body.as_bytes());
    let headers = reader.headers().unwrap().clone();
    let rows = reader
        .records()
        .zip(like)
        .map(|(rec, proto)| {
            let rec = rec.unwrap();
            let mut map = serde_json::Map::new();
            for (h, field) in headers.iter().zip(rec.iter()) {
                let v = match &proto[h] {
                    Value::String(_) => Value::String(field.to_string()),
                    _ if field.is_empty() => Value::Null,
                    _ => serde_json::from_str(field).unwrap(),
                };
                map.insert(h.to_string(), v);
            }
            Value::Object(map)
        })
        .collect();
    Parsed { config, rows, summary }
}

fn parse_json_lines(text: &str) -> Parsed {
    let mut config = Value::Null;
    let mut summary = Value::Null;
    let mut rows = Vec::new();
    for line in text.lines() {
        let mut v: Value = serde_json::from_str(line).unwrap();
        let kind = v.as_object_mut().unwrap().remove("record").unwrap();
        match kind.as_str().unwrap() {
            "config" => config = v,
            "summary" => summary = v,
            "trial" => rows.push(v),
            other => panic!("unexpected record {other}"),
        }
    }
    Parsed { config, rows, summary }
}

fn assert_formats_agree(args: &[&str]) {
    let csv_text = stdout(args);
    let mut json_args = args.to_vec();
    json_args.extend(["--format", "json-lines"]);
    let json = parse_json_lines(&stdout(&json_args));
    let csv = parse_csv(&csv_text, &json.rows);
    assert_eq!(csv.rows.len(), json.rows.len());
    assert!(!csv.rows.is_empty());
    for (c, j) in csv.rows.iter().zip(&json.rows) {
        assert_eq!(c, j);
    }
    assert_eq!(csv.summary, json.summary);
    let mut expected = csv.config;
    expected["format"] = Value::String("json-lines".into());
    assert_eq!(expected, json.config);
}

#[test]
fn csv_and_json_lines_agree() {
    let (_dir, path) = instances();
    let inst = instance(&path, "random2local_6q_s3.json");
    assert_formats_agree(&["run-protocol", "--instance", &inst, "--trials", "20", "--seed", "4"]);
    assert_formats_agree(&["roundtrip", "--trials", "5", "--seed", "9"]);
    assert_formats_agree(&["attack-hjw", "--trials", "5"]);
    assert_formats_agree(&["attack-phase", "--trials", "10", "--oracle", "haar"]);
    assert_formats_agree(&["haar-stats", "--samples", "200"]);
}

#[test]
fn reruns_are_byte_identical() {
    let (_dir, path) = instances();
    let inst = instance(&path, "frustrated_4q.json");
    let args = [
        "run-protocol",
        "--instance",
        &inst,
        "--strategy",
        "semi-honest-ground",
        "--trials",
        "40",
        "--seed",
        "17",
    ];
    assert_eq!(stdout(&args), stdout(&args));
    let rep = ["repeat", "--instance", &inst, "--strategy", "semi-honest-ground", "--meta-trials", "5"];
    assert_eq!(stdout(&rep), stdout(&rep));
}

#[test]
fn different_seeds_differ() {
    let a = stdout(&["roundtrip", "--trials", "3", "--seed", "1"]);
    let b = stdout(&["roundtrip", "--trials", "3", "--seed", "2"]);
    assert_ne!(a, b);
}

#[test]
fn config_header_records_seed_and_cap() {
    let text = stdout(&["roundtrip", "--trials", "2", "--seed", "123"]);
    let first = text.lines().next().unwrap();
    let config: Value = serde_json::from_str(first.strip_prefix("# config ").unwrap()).unwrap();
    assert_eq!(config["seed"], 123);
    assert_eq!(config["command"], "roundtrip");
    assert_eq!(config["max_qubits"], qmerkle_core::qstate::DEFAULT_QUBIT_CAP);
    assert_eq!(text.lines().nth(1).unwrap(), "trial,oracle_seed,fidelity,bot,fail_node,forward_queries,inverse_queries");
}

#[test]
fn output_file_matches_stdout() {
    let dir = TempDir::new().unwrap();
    let file = dir.path().join("out.csv");
    let f = file.display().to_string();
    let out = qmerkle(&["roundtrip", "--trials", "3", "-o", &f]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let written = std::fs::read_to_string(&file).unwrap();
    let mut expected = stdout(&["roundtrip", "--trials", "3", "-o", &f]);
    assert!(expected.is_empty());
    expected = std::fs::read_to_string(&file).unwrap();
    assert_eq!(written, expected);
    assert!(written.contains("\"all_pass\":true"));
}

#[test]
fn roundtrip_never_rejects() {
    let text = stdout(&["roundtrip", "--b", "2", "--ell", "4", "--oracle", "haar", "--trials", "50", "--format", "json-lines"]);
    let parsed = parse_json_lines(&text);
    assert_eq!(parsed.rows.len(), 50);
    for row in &parsed.rows {
        assert_eq!(row["bot"], false);
        assert!(row["fidelity"].as_f64().unwrap() >= 1.0 - 1e-9);
    }
    assert_eq!(parsed.summary["bot_events"], 0);
}

#[test]
fn solve_instance_reports_pinning_ground_energy() {
    let (_dir, path) = instances();
    let text = stdout(&["solve-instance", "--instance", &instance(&path, "pinning_4q.json"), "--format", "json-lines"]);
    let parsed = parse_json_lines(&text);
    let row = &parsed.rows[0];
    assert!(row["lambda_min"].as_f64().unwrap().abs() < 1e-9);
    assert_eq!(row["classification"], "yes");
    assert_eq!(row["label"], "yes");
}

#[test]
fn frustrated_instance_is_outside_promise() {
    let (_dir, path) = instances();
    let text = stdout(&["solve-instance", "--instance", &instance(&path, "frustrated_4q.json"), "--format", "json-lines"]);
    let row = &parse_json_lines(&text).rows[0];
    assert!((row["lambda_per_term"].as_f64().unwrap() - 0.5).abs() < 1e-9);
    assert_eq!(row["classification"], "outside_promise");
}

#[test]
fn invalid_instances_exit_with_status_two() {
    let dir = TempDir::new().unwrap();
    let cases = [
        ("garbage.json", "{ not json"),
        (
            "non_hermitian.json",
            r#"{"n_qubits":1,"alpha":0.1,"beta":0.9,"k":1,"terms":[{"qubits":[1],"matrix":[[[0,0],[1,0]],[[0,0],[0,0]]]}],"label":"unknown"}"#,
        ),
        (
            "bad_index.json",
            r#"{"n_qubits":1,"alpha":0.1,"beta":0.9,"k":1,"terms":[{"qubits":[2],"matrix":[[[1,0],[0,0]],[[0,0],[0,0]]]}],"label":"unknown"}"#,
        ),
    ];
    for (name, body) in cases {
        let path = dir.path().join(name);
        std::fs::write(&path, body).unwrap();
        let p = path.display().to_string();
        for cmd in ["validate-instance", "solve-instance"] {
            let out = qmerkle(&[cmd, "--instance", &p]);
            assert_eq!(out.status.code(), Some(2), "{cmd} {name}");
            assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
        }
    }
    let missing = dir.path().join("missing.json").display().to_string();
    assert_eq!(qmerkle(&["validate-instance", "--instance", &missing]).status.code(), Some(2));
}

#[test]
fn non_positive_arguments_are_rejected() {
    assert_eq!(qmerkle(&["roundtrip", "--trials", "0"]).status.code(), Some(2));
    assert_eq!(qmerkle(&["roundtrip", "--b", "0"]).status.code(), Some(2));
    assert_eq!(qmerkle(&["roundtrip", "--oracle", "bogus"]).status.code(), Some(2));
}

#[test]
fn qubit_cap_comes_from_environment() {
    let out = Command::new(env!("CARGO_BIN_EXE_qmerkle"))
        .args(["roundtrip", "--trials", "1"])
        .env("QMT_MAX_QUBITS", "6")
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    let ok = Command::new(env!("CARGO_BIN_EXE_qmerkle"))
        .args(["roundtrip", "--trials", "1", "--ell", "2"])
        .env("QMT_MAX_QUBITS", "6")
        .output()
        .unwrap();
    assert!(ok.status.success());
    let text = String::from_utf8(ok.stdout).unwrap();
    assert!(text.starts_with("# config ") && text.contains("\"max_qubits\":6"));
}

#[test]
fn honest_prover_on_no_instance_is_rejected() {
    let (_dir, path) = instances();
    let text = stdout(&[
        "run-protocol",
        "--instance",
        &instance(&path, "calibrated_no_4q.json"),
        "--trials",
        "10",
        "--format",
        "json-lines",
    ]);
    let parsed = parse_json_lines(&text);
    assert_eq!(parsed.summary["accepted"], 0);
    assert!(parsed.rows.iter().all(|r| r["accepted"] == false));
}

#[test]
fn phase_attack_on_xor_oracle_always_accepts() {
    let text = stdout(&["attack-phase", "--trials", "50", "--format", "json-lines"]);
    let parsed = parse_json_lines(&text);
    assert_eq!(parsed.summary["accepted"], 50);
    for r in &parsed.rows {
        assert!((r["trace_distance"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn hjw_summary_marks_unbounded_access() {
    let text = stdout(&["attack-hjw", "--trials", "3", "--oracle", "identity", "--format", "json-lines"]);
    let parsed = parse_json_lines(&text);
    assert_eq!(parsed.summary["access"], "unbounded");
    for r in &parsed.rows {
        assert!((r["achieved_fidelity"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    }
}
