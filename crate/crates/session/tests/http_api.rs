use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use riskprobe_core::records::{read_csv, read_jsonl};
use riskprobe_session::service::{Service, ServiceConfig};
use riskprobe_session::router;

struct Harness {
    _dir: tempfile::TempDir,
    path: std::path::PathBuf,
}

impl Harness {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().to_path_buf();
        Harness { _dir: dir, path }
    }

    fn app(&self) -> Router {
        let mut cfg = ServiceConfig::new(&self.path);
        cfg.fsync = false;
        let tick = Arc::new(AtomicU64::new(1_700_000_000_000));
        cfg.clock = Arc::new(move || tick.fetch_add(1, Ordering::Relaxed));
        router(Arc::new(Service::open(cfg).unwrap()))
    }
}

async fn call(app: &Router, method: &str, uri: &str, token: Option<&str>, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header("authorization", format!("Bearer {t}"));
    }
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn call_json(app: &Router, method: &str, uri: &str, token: Option<&str>, body: Option<Value>) -> (StatusCode, Value) {
    let (status, bytes) = call(app, method, uri, token, body).await;
    let v = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or(Value::Null)
    };
    (status, v)
}

async fn create(app: &Router, id: &str) -> String {
    let (st, v) = call_json(app, "POST", "/sessions", None, Some(json!({"session_id": id, "seed": 7}))).await;
    assert_eq!(st, StatusCode::CREATED, "{v}");
    v["experimenter_token"].as_str().unwrap().to_string()
}

async fn register(app: &Router, session: &str, exp: &str) -> (String, String) {
    let (st, v) = call_json(app, "POST", &format!("/sessions/{session}/subjects"), Some(exp), None).await;
    assert_eq!(st, StatusCode::CREATED, "{v}");
    (v["subject_id"].as_str().unwrap().to_string(), v["token"].as_str().unwrap().to_string())
}

async fn choose(app: &Router, session: &str, sid: &str, tok: &str, body: Value) -> (StatusCode, Value) {
    call_json(app, "POST", &format!("/sessions/{session}/subjects/{sid}/choices"), Some(tok), Some(body)).await
}

/// Answers every screen: safe on the first `safe` rows, then risky, and
/// `ab`/`ac` on every spread screen.
async fn complete_subject(app: &Router, session: &str, sid: &str, tok: &str, safe: u32, ab: &str, ac: &str) {
    for row in 1..=10u32 {
        let pick = if row <= safe { "safe" } else { "risky" };
        let (st, v) = choose(app, session, sid, tok, json!({"screen": row.to_string(), "chosen": pick})).await;
        assert_eq!(st, StatusCode::CREATED, "{v}");
    }
    loop {
        let (st, next) = call_json(app, "GET", &format!("/sessions/{session}/subjects/{sid}/next"), Some(tok), None).await;
        assert_eq!(st, StatusCode::OK);
        if next["stage"] != "spread" {
            assert_eq!(next["stage"], "complete");
            break;
        }
        let case = next["case_id"].as_str().unwrap().to_string();
        assert_eq!(next["lotteries"].as_array().unwrap().len(), 3);
        for d in next["decisions"].as_array().unwrap() {
            let pair = d["pair"].as_str().unwrap();
            let pick = if pair == "AB" { ab } else { ac };
            let (st, v) = choose(app, session, sid, tok, json!({"screen": case, "pair": pair, "chosen": pick})).await;
            assert_eq!(st, StatusCode::CREATED, "{v}");
        }
    }
}

#[tokio::test]
async fn second_switch_is_rejected() {
    let h = Harness::new();
    let app = h.app();
    let exp = create(&app, "sw").await;
    let (sid, tok) = register(&app, "sw", &exp).await;
    for (row, pick) in [(1, "safe"), (2, "safe"), (3, "risky")] {
        let (st, _) = choose(&app, "sw", &sid, &tok, json!({"screen": row.to_string(), "chosen": pick})).await;
        assert_eq!(st, StatusCode::CREATED);
    }
    let (st, v) = choose(&app, "sw", &sid, &tok, json!({"screen": "4", "chosen": "safe"})).await;
    assert_eq!(st, StatusCode::CONFLICT);
    assert!(v["error"].as_str().unwrap().contains("switch"), "{v}");

    let (_, next) = call_json(&app, "GET", &format!("/sessions/sw/subjects/{sid}/next"), Some(&tok), None).await;
    assert_eq!(next["stage"], "price_list");
    assert_eq!(next["row"], 4);
    assert_eq!(next["allowed"], json!(["risky"]));
}

#[tokio::test]
async fn choices_are_ordered_and_answered_once() {
    let h = Harness::new();
    let app = h.app();
    let exp = create(&app, "ord").await;
    let (sid, tok) = register(&app, "ord", &exp).await;
    let (st, _) = choose(&app, "ord", &sid, &tok, json!({"screen": "2", "chosen": "safe"})).await;
    assert_eq!(st, StatusCode::CONFLICT);
    let (st, _) = choose(&app, "ord", &sid, &tok, json!({"screen": "C1", "pair": "AB", "chosen": "A"})).await;
    assert_eq!(st, StatusCode::CONFLICT);
    let (st, _) = choose(&app, "ord", &sid, &tok, json!({"screen": "1", "chosen": "A"})).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    let (st, _) = choose(&app, "ord", &sid, &tok, json!({"screen": "1", "chosen": "safe"})).await;
    assert_eq!(st, StatusCode::CREATED);

    let before = call(&app, "GET", "/sessions/ord/export?format=jsonl", Some(&exp), None).await.1;
    let log_before = std::fs::read(h.path.join("ord.events.jsonl")).unwrap();
    let (st, _) = choose(&app, "ord", &sid, &tok, json!({"screen": "1", "chosen": "safe"})).await;
    assert_eq!(st, StatusCode::CONFLICT);
    assert_eq!(call(&app, "GET", "/sessions/ord/export?format=jsonl", Some(&exp), None).await.1, before);
    assert_eq!(std::fs::read(h.path.join("ord.events.jsonl")).unwrap(), log_before);
}

#[tokio::test]
async fn spread_answers_form_the_pattern() {
    let h = Harness::new();
    let app = h.app();
    let exp = create(&app, "pat").await;
    let (sid, tok) = register(&app, "pat", &exp).await;
    complete_subject(&app, "pat", &sid, &tok, 4, "A", "C").await;

    let (st, dash) = call_json(&app, "GET", "/sessions/pat/dashboard", Some(&exp), None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(dash["complete"], 1);
    assert_eq!(dash["hl_histogram"][4], 1);
    let counts = dash["pattern_table"]["counts"].as_array().unwrap();
    assert_eq!(counts.len(), 6);
    for c in counts {
        // (A,A), (B,A), (A,C), (B,C)
        assert_eq!(c, &json!([0, 0, 1, 0]));
    }
    let green = dash["regions"].as_array().unwrap().iter().find(|r| r["pattern"] == "(A,C)").unwrap();
    assert_eq!(green["region"], "Green");
    assert_eq!(green["count"], 6);
}

#[tokio::test]
async fn auth_and_lookup_errors() {
    let h = Harness::new();
    let app = h.app();
    let exp = create(&app, "auth").await;
    let (sid, tok) = register(&app, "auth", &exp).await;

    let (st, _) = call(&app, "POST", "/sessions/auth/subjects", Some("nope"), None).await;
    assert_eq!(st, StatusCode::UNAUTHORIZED);
    let (st, _) = call(&app, "POST", "/sessions/auth/subjects", None, None).await;
    assert_eq!(st, StatusCode::UNAUTHORIZED);
    let (st, _) = call(&app, "GET", &format!("/sessions/auth/subjects/{sid}/next"), Some(&exp), None).await;
    assert_eq!(st, StatusCode::UNAUTHORIZED);
    let (st, _) = call(&app, "GET", "/sessions/auth/dashboard", Some(&tok), None).await;
    assert_eq!(st, StatusCode::UNAUTHORIZED);
    let (st, _) = call(&app, "GET", "/sessions/missing/dashboard", Some(&exp), None).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    let (st, _) = call(&app, "GET", "/sessions/auth/subjects/ghost/next", Some(&tok), None).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    let (st, _) = call(&app, "GET", &format!("/sessions/auth/subjects/{sid}/next?token={tok}"), None, None).await;
    assert_eq!(st, StatusCode::OK);

    let (st, _) = call(&app, "POST", &format!("/sessions/auth/subjects/{sid}/choices"), Some(&tok), None).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    let (st, _) = call(&app, "GET", "/sessions/auth/export?format=xml", Some(&exp), None).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn duplicate_session_is_rejected() {
    let h = Harness::new();
    let app = h.app();
    create(&app, "dup").await;
    let (st, _) = call_json(&app, "POST", "/sessions", None, Some(json!({"session_id": "dup"}))).await;
    assert_eq!(st, StatusCode::CONFLICT);
    let (st, _) = call_json(&app, "POST", "/sessions", None, Some(json!({"session_id": "a/b"}))).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    let (st, _) = call_json(&app, "POST", "/sessions", None, Some(json!({"sesion_id": "typo"}))).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);

    // after a restart too
    let app = h.app();
    let (st, _) = call_json(&app, "POST", "/sessions", None, Some(json!({"session_id": "dup"}))).await;
    assert_eq!(st, StatusCode::CONFLICT);
}

fn lottery(percents: [u32; 4]) -> Value {
    json!({
        "prizes": ["1", "16", "21", "77/2"],
        "probs": percents.iter().map(|p| format!("{p}/100")).collect::<Vec<_>>(),
    })
}

#[tokio::test]
async fn custom_batteries_are_validated() {
    let h = Harness::new();
    let app = h.app();
    let body = json!({"session_id": "cust", "battery": {"kind": "custom", "bases": [lottery([10, 40, 40, 10])]}});
    let (st, v) = call_json(&app, "POST", "/sessions", None, Some(body)).await;
    assert_eq!(st, StatusCode::CREATED, "{v}");
    assert_eq!(v["cases"], json!(["C1"]));

    // no mass on the second prize: the A/B spread does not exist
    let body = json!({"battery": {"kind": "custom", "bases": [lottery([10, 0, 80, 10])]}});
    let (st, _) = call_json(&app, "POST", "/sessions", None, Some(body)).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    let body = json!({"battery": {"kind": "custom", "bases": []}});
    let (st, _) = call_json(&app, "POST", "/sessions", None, Some(body)).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    let body = json!({"battery": {"kind": "custom", "bases": [{"prizes": ["1", "2"], "probs": ["1/2", "1/3"]}]}});
    let (st, _) = call_json(&app, "POST", "/sessions", None, Some(body)).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn export_is_complete_and_stable() {
    let h = Harness::new();
    let app = h.app();
    let exp = create(&app, "exp").await;

    let (st, empty) = call(&app, "GET", "/sessions/exp/export?format=csv", Some(&exp), None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(
        String::from_utf8(empty).unwrap().trim_end(),
        "session_id,subject_id,part,screen,pair,chosen,display_seed,timestamp"
    );

    let n = 3;
    for i in 0..n {
        let (sid, tok) = register(&app, "exp", &exp).await;
        let (ab, ac) = [("A", "A"), ("B", "A"), ("B", "C")][i];
        complete_subject(&app, "exp", &sid, &tok, 3 + i as u32, ab, ac).await;
    }
    // a subject who stopped halfway
    let (sid, tok) = register(&app, "exp", &exp).await;
    choose(&app, "exp", &sid, &tok, json!({"screen": "1", "chosen": "safe"})).await;

    let (_, csv1) = call(&app, "GET", "/sessions/exp/export?format=csv&complete_only=true", Some(&exp), None).await;
    let (_, csv2) = call(&app, "GET", "/sessions/exp/export?format=csv&complete_only=true", Some(&exp), None).await;
    assert_eq!(csv1, csv2);
    let records = read_csv(&csv1[..]).unwrap();
    assert_eq!(records.len(), 22 * n);

    let (_, all) = call(&app, "GET", "/sessions/exp/export?format=jsonl", Some(&exp), None).await;
    let all = read_jsonl(&all[..]).unwrap();
    assert_eq!(all.len(), 22 * n + 1);
    assert_eq!(&all[..22 * n], &records[..]);
    for r in &all {
        r.validate().unwrap();
    }

    // a restarted service exports the same bytes
    let app2 = h.app();
    let (_, csv3) = call(&app2, "GET", "/sessions/exp/export?format=csv&complete_only=true", Some(&exp), None).await;
    assert_eq!(csv1, csv3);
}

#[tokio::test]
async fn finalize_pays_a_reproducible_draw() {
    let h = Harness::new();
    let app = h.app();
    let exp = create(&app, "pay").await;
    let (sid, tok) = register(&app, "pay", &exp).await;

    let uri = format!("/sessions/pay/subjects/{sid}/finalize");
    let (st, _) = call(&app, "POST", &uri, Some(&tok), None).await;
    assert_eq!(st, StatusCode::CONFLICT, "incomplete subjects are not paid");

    complete_subject(&app, "pay", &sid, &tok, 4, "B", "C").await;
    let (st, draw) = call_json(&app, "POST", &uri, Some(&tok), Some(json!({"rng_seed": 12345}))).await;
    assert_eq!(st, StatusCode::OK, "{draw}");
    assert_eq!(draw["rng_seed"], 12345);
    assert_eq!(draw["transcript"].as_array().unwrap().len(), 4);

    let (_, again) = call_json(&app, "POST", &uri, Some(&exp), None).await;
    assert_eq!(draw, again);
    let (st, _) = call_json(&app, "POST", &uri, Some(&tok), Some(json!({"rng_seed": 1}))).await;
    assert_eq!(st, StatusCode::CONFLICT);

    let (_, next) = call_json(&app, "GET", &format!("/sessions/pay/subjects/{sid}/next"), Some(&tok), None).await;
    assert_eq!(next["stage"], "finalized");
    assert_eq!(next["payout"], draw);

    // same answers and seed in a fresh session give the same draw
    let exp2 = create(&app, "pay2").await;
    let (sid2, tok2) = register(&app, "pay2", &exp2).await;
    assert_eq!(sid, sid2);
    complete_subject(&app, "pay2", &sid2, &tok2, 4, "B", "C").await;
    let (_, draw2) = call_json(
        &app,
        "POST",
        &format!("/sessions/pay2/subjects/{sid2}/finalize"),
        Some(&tok2),
        Some(json!({"rng_seed": 12345})),
    )
    .await;
    assert_eq!(draw, draw2);

    let app = h.app();
    let (_, after) = call_json(&app, "POST", &uri, Some(&tok), None).await;
    assert_eq!(draw, after, "the stored draw survives a restart");
}

#[tokio::test]
async fn case_six_alternative_pays_only_its_support() {
    let h = Harness::new();
    let app = h.app();
    let exp = create(&app, "c6").await;
    let mut seen = std::collections::BTreeSet::new();
    for i in 0..40u64 {
        let (sid, tok) = register(&app, "c6", &exp).await;
        complete_subject(&app, "c6", &sid, &tok, 5, "B", "C").await;
        let (_, draw) = call_json(
            &app,
            "POST",
            &format!("/sessions/c6/subjects/{sid}/finalize"),
            Some(&exp),
            Some(json!({"rng_seed": i})),
        )
        .await;
        let p2 = &draw["part2"];
        if p2["screen"] == "C6" && p2["chosen"] == "C" {
            let prize = p2["prize"].as_str().unwrap().to_string();
            assert!(prize == "16" || prize == "77/2", "{prize}");
            seen.insert(prize);
        }
        let p1 = &draw["part1"];
        if p1["screen"] == "10" {
            assert_eq!(p1["prize"], "77/2");
        }
    }
    assert!(!seen.is_empty());
}

#[tokio::test]
async fn closed_sessions_refuse_changes() {
    let h = Harness::new();
    let app = h.app();
    let exp = create(&app, "cl").await;
    let (sid, tok) = register(&app, "cl", &exp).await;
    let (st, _) = call(&app, "POST", "/sessions/cl/close", Some(&tok), None).await;
    assert_eq!(st, StatusCode::UNAUTHORIZED);
    let (st, _) = call(&app, "POST", "/sessions/cl/close", Some(&exp), None).await;
    assert_eq!(st, StatusCode::NO_CONTENT);
    let (st, _) = choose(&app, "cl", &sid, &tok, json!({"screen": "1", "chosen": "safe"})).await;
    assert_eq!(st, StatusCode::CONFLICT);
    let (st, _) = call(&app, "POST", "/sessions/cl/subjects", Some(&exp), None).await;
    assert_eq!(st, StatusCode::CONFLICT);
    let (st, dash) = call_json(&app, "GET", "/sessions/cl/dashboard", Some(&exp), None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(dash["status"], "closed");
}
