use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use serde_json::Value;

use riskprobe_core::records::read_records;

fn riskprobe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_riskprobe")).args(args).output().unwrap()
}

fn json_file(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn gen_writes_both_batteries() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("battery.json");
    assert!(riskprobe(&["gen", "--out", out.to_str().unwrap()]).status.success());
    let v = json_file(&out);
    assert_eq!(v["cases"].as_array().unwrap().len(), 6);
    assert_eq!(v["hl_rows"].as_array().unwrap().len(), 10);
    assert_eq!(v["cases"][5]["id"], "C6");
    assert_eq!(v["hl_rows"][9]["risky"]["probs"], serde_json::json!(["0", "0", "0", "1"]));

    let bases = dir.path().join("bases.json");
    std::fs::write(&bases, r#"[{"prizes":["0","10","20","30","40"],"probs":["1/5","1/5","1/5","1/5","1/5"]}]"#).unwrap();
    let out = riskprobe(&["gen", "--bases", bases.to_str().unwrap()]);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["cases"][0]["family"]["spreads"].as_object().unwrap().len(), 3);
}

#[test]
fn regions_and_crra_curve() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("regions.json");
    let csv = dir.path().join("crra.csv");
    let status = riskprobe(&[
        "regions",
        "--out",
        json.to_str().unwrap(),
        "--crra-csv",
        csv.to_str().unwrap(),
        "--r-from",
        "-1",
        "--r-to",
        "1",
        "--r-step",
        "0.5",
    ])
    .status;
    assert!(status.success());
    let v = json_file(&json);
    let red = &v["regions"][0];
    assert_eq!(red["region"], "Red");
    assert_eq!(red["polygon"], serde_json::json!([["2/5", "8/15"], ["1", "1"], ["3/4", "1"]]));
    assert_eq!(v["triangles"].as_array().unwrap().len(), 10);
    assert_eq!(v["triangles"][6]["labels"], serde_json::json!(["0.37", "0.64"]));
    assert!(v["triangles"][0]["r_lo"].is_null());

    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "r,u1,u2");
    assert_eq!(lines.len(), 6);
    let mid: Vec<f64> = lines[3].split(',').map(|x| x.parse().unwrap()).collect();
    assert_eq!(mid[0], 0.0);
    assert!((mid[1] - 0.4).abs() < 1e-12 && (mid[2] - 8.0 / 15.0).abs() < 1e-12);
}

#[test]
fn simulate_then_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let records = dir.path().join("records.csv");
    let out = riskprobe(&[
        "simulate",
        "--agent",
        "table:0,0.6,0.7,1",
        "--agent",
        "crra:0.5",
        "--n",
        "5",
        "--seed",
        "4",
        "--out",
        records.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read_records(&records).unwrap().len(), 10 * 22);

    let report = dir.path().join("report.json");
    let tables = dir.path().join("tables");
    let out = riskprobe(&[
        "analyze",
        "--input",
        records.to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
        "--tables",
        tables.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let v = json_file(&report);
    assert_eq!(v["subjects"], 10);
    // red table agents choose (A,A); CRRA 0.5 is concave too
    assert_eq!(v["pooled_counts"], serde_json::json!([60, 0, 0, 0]));
    assert_eq!(v["hl_histogram"][6], 10);
    let fig2 = std::fs::read_to_string(tables.join("patterns_by_case.csv")).unwrap();
    assert_eq!(fig2.lines().next().unwrap(), "case,\"(A,A)\",\"(B,A)\",\"(A,C)\",\"(B,C)\",subjects");
    assert!(fig2.lines().any(|l| l == "pooled,60,0,0,0,60"));
}

#[test]
fn simulation_is_reproducible() {
    let args = ["simulate", "--agent", "cara:0.05", "--n", "20", "--tremble", "0.3", "--seed", "9"];
    let a = riskprobe(&args);
    let b = riskprobe(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(a.stdout.iter().filter(|&&c| c == b'\n').count(), 20 * 22);
}

#[test]
fn reference_checks_pass() {
    let dir = tempfile::tempdir().unwrap();
    let tables = dir.path().join("t");
    let out = riskprobe(&["analyze", "--reference", "--tables", tables.to_str().unwrap()]);
    assert!(out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.lines().filter(|l| l.starts_with("PASS")).count(), 8, "{stderr}");
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["report"]["hl_share_test"]["df"], 5);
    let fig4 = std::fs::read_to_string(tables.join("hl_cross_tab.csv")).unwrap();
    assert!(fig4.contains("4,19,37,114,37/114,32.5"));
    let fig3 = std::fs::read_to_string(tables.join("hl_histogram.csv")).unwrap();
    assert!(fig3.contains("\n4,19\n"));
}

#[test]
fn bad_input_is_reported() {
    let out = riskprobe(&["simulate", "--agent", "crra"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot parse agent"));
    let out = riskprobe(&["simulate", "--agent", "crra:0.5", "--tremble", "1.5"]);
    assert_eq!(out.status.code(), Some(2));
    let out = riskprobe(&["analyze", "--input", "/nonexistent/records.csv"]);
    assert_eq!(out.status.code(), Some(2));
    let out = riskprobe(&["analyze"]);
    assert!(!out.status.success());
}

#[test]
fn serve_answers_http() {
    let dir = tempfile::tempdir().unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_riskprobe"))
        .args(["serve", "--port", "0", "--no-fsync"])
        .env("RISKPROBE_DATA_DIR", dir.path())
        .env("RISKPROBE_SEED", "5")
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stderr.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.split_whitespace().nth(2).unwrap().to_string();

    let mut stream = TcpStream::connect(&addr).unwrap();
    write!(
        stream,
        "POST /sessions HTTP/1.1\r\nHost: x\r\nContent-Length: 0\r\nConnection: close\r\n\r\n"
    )
    .unwrap();
    let mut resp = String::new();
    stream.read_to_string(&mut resp).unwrap();
    child.kill().unwrap();
    child.wait().unwrap();

    assert!(resp.starts_with("HTTP/1.1 201"), "{resp}");
    let body = &resp[resp.find("\r\n\r\n").unwrap() + 4..];
    let v: Value = serde_json::from_str(body).unwrap();
    assert_eq!(v["seed"], 5);
    let id = v["session_id"].as_str().unwrap();
    assert!(dir.path().join(format!("{id}.events.jsonl")).exists());
}
