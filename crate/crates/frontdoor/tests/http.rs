use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use topobroker_core::broker::Broker;
use topobroker_core::hes::RuleBase;
use topobroker_frontdoor::router;

fn app() -> Router {
    router(Arc::new(Broker::with_default_kernels(Arc::new(
        RuleBase::builtin(),
    ))))
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (
        status,
        serde_json::from_slice(&bytes).unwrap_or(Value::Null),
    )
}

async fn ask(app: &Router, kind: &str, subject: Value, degree: u64) -> (StatusCode, Value) {
    call(
        app,
        Method::POST,
        "/ask",
        Some(json!({"kind": kind, "subject": subject, "degree": degree})),
    )
    .await
}

#[tokio::test]
async fn objects_carry_decorations() {
    let app = app();
    let (status, body) = call(
        &app,
        Method::POST,
        "/objects",
        Some(json!({"expr": "D(4)*D(5)"})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["id"], "o1");
    assert_eq!(
        body["decorations"],
        json!({"object_kind": "space", "contractible": "yes", "connectivity": "infinity", "dim_bound": 9})
    );
    let (status, body) = call(&app, Method::POST, "/objects", Some(json!({"expr": "S(4"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(
        body["error"].as_str().unwrap().contains("expected"),
        "{body}"
    );
}

#[tokio::test]
async fn ask_by_id_and_by_expression() {
    let app = app();
    call(
        &app,
        Method::POST,
        "/objects",
        Some(json!({"expr": "S(4)"})),
    )
    .await;
    let (status, body) = ask(&app, "homotopy", json!("o1"), 4).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["value"], json!({"rank": 1, "torsion": []}));
    assert_eq!(body["provenance"], json!(["hes", "simplicial"]));
    assert_eq!(body["cached"], false);

    let (_, again) = ask(&app, "homotopy", json!("S(4)"), 4).await;
    assert_eq!(again["cached"], true);
    assert_eq!(again["value"], body["value"]);
    assert_eq!(again["trace"], body["trace"]);

    let (_, em) = ask(&app, "homology", json!("K(C(5),1)"), 5).await;
    assert_eq!(em["value"], json!({"rank": 0, "torsion": [5]}));
    assert_eq!(em["trace"], Value::Null);
}

#[tokio::test]
async fn unknown_has_an_empty_trace() {
    let app = app();
    let (_, body) = ask(&app, "homotopy", json!("S(4)"), 5).await;
    assert_eq!(body["value"], "unknown");
    let id = body["trace"].as_str().unwrap();
    let (status, trace) = call(&app, Method::GET, &format!("/trace/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(trace["steps"], json!([]));
    assert_eq!(trace["lines"], json!(["no applicable rules"]));
}

#[tokio::test]
async fn traces_cite_rules_in_firing_order() {
    let app = app();
    let (_, body) = ask(&app, "homotopy", json!("D(4)*D(5)"), 4).await;
    assert_eq!(body["value"], json!({"rank": 0, "torsion": []}));
    let uri = format!("/trace/{}", body["trace"].as_str().unwrap());
    let (_, trace) = call(&app, Method::GET, &uri, None).await;
    let rules: Vec<&str> = trace["steps"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["rule"].as_str().unwrap())
        .collect();
    assert_eq!(rules, ["R3", "R3", "R4", "R1"]);
    assert_eq!(trace["steps"][3]["cite"], "contractible ⇒ πₙ=0");
    assert_eq!(trace["steps"][3]["produced"], "homotopy(D(4)*D(5), 4, 0)");

    let (status, _) = call(&app, Method::GET, "/trace/t99", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn certify_accepts_tables() {
    let app = app();
    let (_, ok) = ask(&app, "certify", json!([[0, 1], [1, 0]]), 0).await;
    assert_eq!(ok["value"]["status"], "certified");
    assert_eq!(ok["provenance"], json!(["certifier"]));
    let (_, bad) = ask(
        &app,
        "certify",
        json!("0 1 2 3; 1 3 3 0; 2 3 0 1; 3 0 1 2"),
        0,
    )
    .await;
    assert_eq!(bad["value"]["status"], "failed");
    assert_eq!(
        bad["value"]["summary"],
        "failed; associativity fails at (1,1,2)"
    );
    let (status, _) = ask(&app, "certify", json!([[0, 1], [1]]), 0).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn invalid_questions() {
    let app = app();
    assert_eq!(
        ask(&app, "cohomology", json!("S(2)"), 1).await.0,
        StatusCode::BAD_REQUEST
    );
    assert_eq!(
        ask(&app, "homotopy", json!("C(5)"), 1).await.0,
        StatusCode::BAD_REQUEST
    );
    let (status, _) = call(
        &app,
        Method::POST,
        "/ask",
        Some(json!({"kind": "homology", "subject": "S(2)"})),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn stats_and_session() {
    let app = app();
    let (_, stats) = call(&app, Method::GET, "/stats", None).await;
    assert_eq!(stats["cache"], json!({"size": 0, "hits": 0, "misses": 0}));
    let names: Vec<&str> = stats["kernels"]
        .as_array()
        .unwrap()
        .iter()
        .map(|k| k["name"].as_str().unwrap())
        .collect();
    assert_eq!(names, ["simplicial", "grouphom", "hes", "certifier"]);

    call(
        &app,
        Method::POST,
        "/objects",
        Some(json!({"expr": "C(5)"})),
    )
    .await;
    ask(&app, "homology", json!("o1"), 5).await;
    ask(&app, "homology", json!("C(5)"), 5).await;
    let (_, stats) = call(&app, Method::GET, "/stats", None).await;
    assert_eq!(stats["cache"], json!({"size": 1, "hits": 1, "misses": 1}));
    assert_eq!(stats["kernels"][1]["invocations"], 1);

    let (_, session) = call(&app, Method::GET, "/session", None).await;
    let kinds: Vec<&str> = session
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["type"].as_str().unwrap())
        .collect();
    assert_eq!(kinds, ["object", "question", "question"]);
    assert_eq!(session[1]["question"], "H_5(C(5))");
    assert_eq!(session[2]["cached"], true);
}
