//! HTTP/JSON front door of the broker.
//!
//! | route             | body                                   |
//! |-------------------|----------------------------------------|
//! | `POST /objects`   | `{"expr": "S(2)*S(3)"}`                |
//! | `POST /ask`       | `{"kind", "subject", "degree"}`        |
//! | `GET /trace/{id}` |                                        |
//! | `GET /stats`      |                                        |
//! | `GET /session`    |                                        |
//!
//! [`Api`] holds the request logic and is usable without a server; the
//! command-line front end drives it directly.

use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use num_bigint::BigInt;
use serde::Deserialize;
use serde_json::{json, Value as JsonValue};

use topobroker_core::broker::{
    Answer, Broker, BrokerError, Connectivity, Decoration, Question, QuestionKind, SessionEntry,
    StoredObject, StoredTrace, Value,
};
use topobroker_core::certifier::{CertReport, MultiplicationTable};
use topobroker_core::expr::{parse, render};
use topobroker_core::hes::explain;
use topobroker_core::snf::FgAbelianGroup;
use topobroker_core::term::Term;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: u16,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn bad_request(message: impl Into<String>) -> Self {
        ApiError {
            status: 400,
            code: "invalid_request",
            message: message.into(),
        }
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        ApiError {
            status: 404,
            code: "not_found",
            message: message.into(),
        }
    }

    /// 4xx statuses are the caller's fault.
    pub fn is_user_error(&self) -> bool {
        (400..500).contains(&self.status)
    }

    pub fn to_json(&self) -> JsonValue {
        json!({ "error": self.message, "code": self.code })
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for ApiError {}

impl From<BrokerError> for ApiError {
    fn from(e: BrokerError) -> Self {
        let (status, code) = match e {
            BrokerError::InvalidQuestion(_) => (400, "invalid_question"),
            BrokerError::InvalidObject(_) => (400, "invalid_object"),
            BrokerError::Unroutable(_) => (422, "unroutable"),
            BrokerError::DuplicateKernel(_) => (409, "duplicate_kernel"),
            BrokerError::Computation { .. } => (502, "computation_failed"),
            BrokerError::Cycle { .. } => (508, "dependency_cycle"),
        };
        ApiError {
            status,
            code,
            message: e.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self.to_json())).into_response()
    }
}

#[derive(Debug, Deserialize)]
pub struct NewObject {
    pub expr: String,
}

#[derive(Debug, Deserialize)]
pub struct Ask {
    pub kind: String,
    pub subject: JsonValue,
    #[serde(default)]
    pub degree: Option<u64>,
}

/// Front-door operations against one broker.
#[derive(Clone)]
pub struct Api {
    broker: Arc<Broker>,
}

impl Api {
    pub fn new(broker: Arc<Broker>) -> Self {
        Api { broker }
    }

    pub fn broker(&self) -> &Arc<Broker> {
        &self.broker
    }

    pub fn new_object(&self, req: &NewObject) -> Result<JsonValue, ApiError> {
        let expr = parse(&req.expr).map_err(|e| ApiError::bad_request(e.to_string()))?;
        let obj = self.broker.new_object(expr)?;
        Ok(object_json(&obj))
    }

    pub fn question(&self, req: &Ask) -> Result<Question, ApiError> {
        let kind: QuestionKind = req.kind.parse()?;
        let subject = match kind {
            QuestionKind::Certify => table_subject(&req.subject)?.to_term(),
            _ => self.space_subject(&req.subject)?,
        };
        let degree = match (kind, req.degree) {
            (QuestionKind::Certify, _) => 0,
            (_, Some(n)) => {
                usize::try_from(n).map_err(|_| ApiError::bad_request("degree out of range"))?
            }
            (_, None) => return Err(ApiError::bad_request("missing degree")),
        };
        let q = Question::new(kind, subject, degree);
        q.validate()?;
        Ok(q)
    }

    fn space_subject(&self, subject: &JsonValue) -> Result<Term, ApiError> {
        let s = subject.as_str().ok_or_else(|| {
            ApiError::bad_request("subject must be an object id or an expression")
        })?;
        if let Some(obj) = self.broker.object(s) {
            return Ok(obj.expr);
        }
        parse(s).map_err(|e| ApiError::bad_request(e.to_string()))
    }

    pub fn ask(&self, req: &Ask) -> Result<JsonValue, ApiError> {
        let q = self.question(req)?;
        let answer = self.broker.ask(&q)?;
        Ok(answer_json(&q, &answer))
    }

    pub fn trace(&self, id: &str) -> Result<JsonValue, ApiError> {
        self.broker
            .trace(id)
            .map(|t| trace_json(id, &t))
            .ok_or_else(|| ApiError::not_found(format!("no trace {id:?}")))
    }

    pub fn stats(&self) -> JsonValue {
        let s = self.broker.stats();
        json!({
            "kernels": s.kernels.iter().map(|k| json!({
                "name": k.name,
                "transport": k.transport.to_string(),
                "invocations": k.invocations,
            })).collect::<Vec<_>>(),
            "cache": { "size": s.cache_size, "hits": s.hits, "misses": s.misses },
        })
    }

    pub fn session(&self) -> JsonValue {
        JsonValue::Array(
            self.broker
                .session()
                .iter()
                .map(session_entry_json)
                .collect(),
        )
    }
}

/// A table given as rows (`[[0,1],[1,0]]`), as `{"rows", "identity"}`, or in
/// the text format with `;` allowed between rows.
pub fn table_subject(subject: &JsonValue) -> Result<MultiplicationTable, ApiError> {
    let bad =
        |e: &dyn std::fmt::Display| ApiError::bad_request(format!("bad multiplication table: {e}"));
    let rows =
        |v: &JsonValue| serde_json::from_value::<Vec<Vec<i64>>>(v.clone()).map_err(|e| bad(&e));
    let table = match subject {
        JsonValue::String(text) => MultiplicationTable::parse(&text.replace(';', "\n")),
        JsonValue::Array(_) => MultiplicationTable::new(rows(subject)?, 0),
        JsonValue::Object(o) => {
            let identity = match o.get("identity") {
                None => 0,
                Some(i) => i
                    .as_u64()
                    .and_then(|i| usize::try_from(i).ok())
                    .ok_or_else(|| bad(&"identity"))?,
            };
            MultiplicationTable::new(
                rows(o.get("rows").ok_or_else(|| bad(&"missing rows"))?)?,
                identity,
            )
        }
        _ => return Err(bad(&"expected rows, an object or text")),
    };
    table.map_err(|e| bad(&e))
}

fn bigint_json(n: &BigInt) -> JsonValue {
    match u64::try_from(n) {
        Ok(v) => json!(v),
        Err(_) => json!(n.to_string()),
    }
}

pub fn group_json(g: &FgAbelianGroup) -> JsonValue {
    json!({ "rank": g.rank(), "torsion": g.torsion().iter().map(bigint_json).collect::<Vec<_>>() })
}

/// Inverse of [`group_json`].
pub fn group_from_json(v: &JsonValue) -> Option<FgAbelianGroup> {
    let rank = usize::try_from(v.get("rank")?.as_u64()?).ok()?;
    let torsion = v
        .get("torsion")?
        .as_array()?
        .iter()
        .map(|d| match d {
            JsonValue::Number(n) => n.as_u64().map(Into::into),
            JsonValue::String(s) => s.parse().ok(),
            _ => None,
        })
        .collect::<Option<Vec<_>>>()?;
    FgAbelianGroup::from_invariants(rank, torsion)
}

pub fn report_json(r: &CertReport) -> JsonValue {
    json!({
        "status": r.status.as_str(),
        "summary": r.to_string(),
        "obligations": r.obligations.iter().map(|o| json!({
            "axiom": o.axiom.id(),
            "statement": o.statement,
            "holds": o.holds,
            "counterexample": o.counterexample,
        })).collect::<Vec<_>>(),
    })
}

pub fn value_json(v: &Value) -> JsonValue {
    match v {
        Value::Group(g) => group_json(g),
        Value::Unknown => json!("unknown"),
        Value::Certificate(r) => report_json(r),
    }
}

pub fn answer_json(q: &Question, a: &Answer) -> JsonValue {
    json!({
        "question": q.describe(),
        "value": value_json(&a.value),
        "provenance": a.provenance,
        "trace": a.trace_id,
        "cached": a.cached,
    })
}

pub fn decorations_json(d: &Decoration) -> JsonValue {
    json!({
        "object_kind": d.object_kind.as_str(),
        "contractible": d.contractible.as_str(),
        "connectivity": match d.connectivity {
            Connectivity::Finite(k) => json!(k),
            Connectivity::Infinite => json!("infinity"),
        },
        "dim_bound": d.dim_bound,
    })
}

pub fn object_json(o: &StoredObject) -> JsonValue {
    json!({ "id": o.id, "expr": render(&o.expr), "decorations": decorations_json(&o.decoration) })
}

pub fn trace_json(id: &str, t: &StoredTrace) -> JsonValue {
    let steps: Vec<JsonValue> = t
        .derivation
        .trace
        .steps
        .iter()
        .map(|s| {
            json!({
                "rule": s.rule,
                "cite": s.cite,
                "bindings": s.bindings.iter().map(|(k, v)| (k.clone(), json!(v.to_string()))).collect::<serde_json::Map<_, _>>(),
                "consumed": s.consumed.iter().map(ToString::to_string).collect::<Vec<_>>(),
                "produced": s.produced.to_string(),
                "subqueries": s.subqueries.iter().map(|sq| json!({
                    "question": Question::homology(sq.subject.clone(), sq.degree).describe(),
                    "answer": sq.answer.to_string(),
                })).collect::<Vec<_>>(),
            })
        })
        .collect();
    json!({
        "id": id,
        "question": t.question.describe(),
        "steps": steps,
        "lines": explain(&t.derivation.trace).lines().collect::<Vec<_>>(),
    })
}

fn session_entry_json(e: &SessionEntry) -> JsonValue {
    match e {
        SessionEntry::Object(o) => {
            let mut v = object_json(o);
            v["type"] = json!("object");
            v
        }
        SessionEntry::Question { question, answer } => {
            let mut v = answer_json(question, answer);
            v["type"] = json!("question");
            v["kind"] = json!(question.kind.as_str());
            v
        }
    }
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.unwrap_or_else(|e| {
        Err(ApiError {
            status: 500,
            code: "internal",
            message: e.to_string(),
        })
    })
}

async fn post_object(
    State(api): State<Api>,
    Json(req): Json<NewObject>,
) -> Result<Json<JsonValue>, ApiError> {
    blocking(move || api.new_object(&req)).await.map(Json)
}

async fn post_ask(
    State(api): State<Api>,
    Json(req): Json<Ask>,
) -> Result<Json<JsonValue>, ApiError> {
    blocking(move || api.ask(&req)).await.map(Json)
}

async fn get_trace(
    State(api): State<Api>,
    Path(id): Path<String>,
) -> Result<Json<JsonValue>, ApiError> {
    api.trace(&id).map(Json)
}

async fn get_stats(State(api): State<Api>) -> Json<JsonValue> {
    Json(api.stats())
}

async fn get_session(State(api): State<Api>) -> Json<JsonValue> {
    Json(api.session())
}

pub fn router(broker: Arc<Broker>) -> Router {
    Router::new()
        .route("/objects", post(post_object))
        .route("/ask", post(post_ask))
        .route("/trace/{id}", get(get_trace))
        .route("/stats", get(get_stats))
        .route("/session", get(get_session))
        .with_state(Api::new(broker))
}

pub async fn serve(broker: Arc<Broker>, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(broker)).await
}
