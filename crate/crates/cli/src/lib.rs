//! Command evaluation for the `topobroker` binary.
//!
//! Every command goes through the front-door JSON operations, either against
//! an in-process broker or a running server (`--connect`), so the text and
//! `--json` renderings always come from the same data.

use std::fmt::Write as _;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand};
use serde_json::{json, Value as JsonValue};

use topobroker_core::broker::{
    self, default_accepts, default_kernel, Broker, KernelDescriptor, DEFAULT_KERNELS,
};
use topobroker_core::hes::RuleBase;
use topobroker_core::wire;
use topobroker_frontdoor::{group_from_json, Api, ApiError, Ask, NewObject};

pub const DEFAULT_HTTP: &str = "127.0.0.1:8026";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USER: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

#[derive(Debug, Clone, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Run the wire server and the HTTP front door.
    Serve {
        #[arg(long, env = wire::PORT_ENV, default_value_t = wire::DEFAULT_PORT)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Address of the HTTP front door.
        #[arg(long, default_value = DEFAULT_HTTP)]
        http: String,
    },
    /// Ask a question: `ask homotopy "S(4)" 4`, `ask certify "0 1;1 0"`.
    Ask {
        kind: String,
        /// Object id, expression, or (for certify) a table.
        subject: String,
        degree: Option<u64>,
    },
    /// Store an object and show its decorations.
    New {
        expr: String,
    },
    /// Show a trace by id, or `last`.
    Explain {
        target: String,
    },
    /// Kernel invocations and cache counters.
    Stats,
    /// Objects and answers so far, in order.
    Session,
    /// Run commands from a file, one per line.
    Script {
        path: PathBuf,
    },
    /// Certify the multiplication table in a file.
    Certify {
        table: PathBuf,
    },
    /// Read commands from standard input.
    Repl,
}

/// A single command line inside a script or the REPL.
#[derive(Debug, Parser)]
#[command(no_binary_name = true, disable_help_flag = true)]
struct Line {
    #[command(subcommand)]
    command: Command,
}

/// Parses one script line; `None` for blanks and comments.
pub fn parse_line(line: &str) -> Result<Option<Command>, String> {
    let line = line.trim();
    if line.is_empty() || line.starts_with('#') {
        return Ok(None);
    }
    let words = shlex::split(line).ok_or_else(|| format!("unbalanced quotes in {line:?}"))?;
    Line::try_parse_from(words)
        .map(|l| Some(l.command))
        .map_err(|e| {
            e.to_string()
                .lines()
                .next()
                .unwrap_or("bad command")
                .to_string()
        })
}

/// Where front-door requests go.
pub trait Backend {
    fn new_object(&mut self, req: &JsonValue) -> Result<JsonValue, ApiError>;
    fn ask(&mut self, req: &JsonValue) -> Result<JsonValue, ApiError>;
    fn trace(&mut self, id: &str) -> Result<JsonValue, ApiError>;
    fn stats(&mut self) -> Result<JsonValue, ApiError>;
    fn session(&mut self) -> Result<JsonValue, ApiError>;
}

fn decode<T: serde::de::DeserializeOwned>(v: &JsonValue) -> Result<T, ApiError> {
    serde_json::from_value(v.clone()).map_err(|e| ApiError::bad_request(e.to_string()))
}

pub struct Local(pub Api);

impl Backend for Local {
    fn new_object(&mut self, req: &JsonValue) -> Result<JsonValue, ApiError> {
        self.0.new_object(&decode::<NewObject>(req)?)
    }

    fn ask(&mut self, req: &JsonValue) -> Result<JsonValue, ApiError> {
        self.0.ask(&decode::<Ask>(req)?)
    }

    fn trace(&mut self, id: &str) -> Result<JsonValue, ApiError> {
        self.0.trace(id)
    }

    fn stats(&mut self) -> Result<JsonValue, ApiError> {
        Ok(self.0.stats())
    }

    fn session(&mut self) -> Result<JsonValue, ApiError> {
        Ok(self.0.session())
    }
}

/// A front door reached over HTTP.
pub struct Remote {
    base: String,
    agent: ureq::Agent,
}

impl Remote {
    pub fn new(base: &str) -> Self {
        let base = if base.contains("://") {
            base.to_string()
        } else {
            format!("http://{base}")
        };
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(300)))
            .build()
            .into();
        Remote {
            base: base.trim_end_matches('/').to_string(),
            agent,
        }
    }

    fn unreachable(&self, e: impl std::fmt::Display) -> ApiError {
        ApiError {
            status: 503,
            code: "unreachable",
            message: format!("broker at {} unreachable: {e}", self.base),
        }
    }

    fn finish(
        &self,
        resp: Result<ureq::http::Response<ureq::Body>, ureq::Error>,
    ) -> Result<JsonValue, ApiError> {
        let mut resp = resp.map_err(|e| self.unreachable(e))?;
        let status = resp.status().as_u16();
        let body: JsonValue = resp
            .body_mut()
            .read_json()
            .map_err(|e| self.unreachable(e))?;
        if status < 300 {
            return Ok(body);
        }
        let code = match body["code"].as_str() {
            Some("invalid_question") => "invalid_question",
            Some("not_found") => "not_found",
            Some("unroutable") => "unroutable",
            _ => "remote_error",
        };
        Err(ApiError {
            status,
            code,
            message: body["error"]
                .as_str()
                .unwrap_or("request failed")
                .to_string(),
        })
    }

    fn post(&self, path: &str, req: &JsonValue) -> Result<JsonValue, ApiError> {
        self.finish(
            self.agent
                .post(format!("{}{path}", self.base))
                .send_json(req),
        )
    }

    fn get(&self, path: &str) -> Result<JsonValue, ApiError> {
        self.finish(self.agent.get(format!("{}{path}", self.base)).call())
    }
}

impl Backend for Remote {
    fn new_object(&mut self, req: &JsonValue) -> Result<JsonValue, ApiError> {
        self.post("/objects", req)
    }

    fn ask(&mut self, req: &JsonValue) -> Result<JsonValue, ApiError> {
        self.post("/ask", req)
    }

    fn trace(&mut self, id: &str) -> Result<JsonValue, ApiError> {
        self.get(&format!("/trace/{id}"))
    }

    fn stats(&mut self) -> Result<JsonValue, ApiError> {
        self.get("/stats")
    }

    fn session(&mut self) -> Result<JsonValue, ApiError> {
        self.get("/session")
    }
}

/// Builds a broker with the standard kernels, some of them possibly remote.
pub fn build_broker(rules: Option<&Path>, remotes: &[(String, String)]) -> Result<Broker, String> {
    let rules = match rules {
        None => RuleBase::builtin(),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            RuleBase::load(&text).map_err(|e| format!("{}: {e}", p.display()))?
        }
    };
    let rules = Arc::new(rules);
    for (name, _) in remotes {
        if !DEFAULT_KERNELS.contains(&name.as_str()) {
            return Err(format!(
                "unknown kernel {name:?}; expected one of {}",
                DEFAULT_KERNELS.join(", ")
            ));
        }
    }
    let b = Broker::new();
    for name in DEFAULT_KERNELS {
        let d = match remotes.iter().rev().find(|(n, _)| n == name) {
            Some((_, endpoint)) => {
                KernelDescriptor::remote(name, default_accepts(name).expect("standard"), endpoint)
            }
            None => default_kernel(name, &rules).expect("standard"),
        };
        b.register_kernel(d).map_err(|e| e.to_string())?;
    }
    Ok(b)
}

/// Parses `name=host:port`.
pub fn parse_remote(s: &str) -> Result<(String, String), String> {
    match s.split_once('=') {
        Some((name, endpoint)) if !name.is_empty() && endpoint.contains(':') => {
            Ok((name.to_string(), endpoint.to_string()))
        }
        _ => Err(format!("expected NAME=HOST:PORT, got {s:?}")),
    }
}

/// Runs the wire server on a background thread and the HTTP front door on
/// this one. Never returns unless a listener fails.
pub fn serve(broker: Arc<Broker>, wire_addr: &str, http_addr: &str) -> Result<(), String> {
    let listener =
        TcpListener::bind(wire_addr).map_err(|e| format!("cannot bind {wire_addr}: {e}"))?;
    let wire_local = listener.local_addr().map_err(|e| e.to_string())?;
    let for_wire = Arc::clone(&broker);
    std::thread::spawn(move || {
        if let Err(e) = broker::serve(for_wire, listener) {
            log::error!("wire listener failed: {e}");
        }
    });
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    rt.block_on(async {
        let http = tokio::net::TcpListener::bind(http_addr)
            .await
            .map_err(|e| format!("cannot bind {http_addr}: {e}"))?;
        let http_local = http.local_addr().map_err(|e| e.to_string())?;
        println!("wire on {wire_local}, http on {http_local}");
        topobroker_frontdoor::serve(broker, http)
            .await
            .map_err(|e| e.to_string())
    })
}

pub struct Session {
    backend: Box<dyn Backend>,
    json: bool,
    last_trace: Option<String>,
    depth: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub text: String,
    pub code: i32,
}

impl Outcome {
    fn ok(text: String) -> Self {
        Outcome {
            text,
            code: EXIT_OK,
        }
    }

    fn user(text: String) -> Self {
        Outcome {
            text: format!("error: {text}"),
            code: EXIT_USER,
        }
    }
}

impl Session {
    pub fn new(backend: Box<dyn Backend>, json: bool) -> Self {
        Session {
            backend,
            json,
            last_trace: None,
            depth: 0,
        }
    }

    pub fn local(broker: Arc<Broker>, json: bool) -> Self {
        Session::new(Box::new(Local(Api::new(broker))), json)
    }

    fn api_error(&self, e: &ApiError) -> Outcome {
        let text = if self.json {
            e.to_json().to_string()
        } else {
            format!("error: {e}")
        };
        let code = if e.is_user_error() {
            EXIT_USER
        } else {
            EXIT_FAILURE
        };
        Outcome { text, code }
    }

    fn render(&self, v: &JsonValue, text: impl FnOnce(&JsonValue) -> String) -> Outcome {
        Outcome::ok(if self.json { v.to_string() } else { text(v) })
    }

    fn ask(&mut self, req: JsonValue, with_obligations: bool) -> Outcome {
        match self.backend.ask(&req) {
            Ok(v) => {
                if let Some(t) = v["trace"].as_str() {
                    self.last_trace = Some(t.to_string());
                }
                self.render(&v, |v| {
                    let mut s = render_answer(v);
                    if with_obligations {
                        for o in v["value"]["obligations"].as_array().into_iter().flatten() {
                            let _ = write!(s, "\n  {}", render_obligation(o));
                        }
                    }
                    s
                })
            }
            Err(e) => self.api_error(&e),
        }
    }

    pub fn eval(&mut self, c: &Command) -> Outcome {
        match c {
            Command::Ask {
                kind,
                subject,
                degree,
            } => self.ask(
                json!({"kind": kind, "subject": subject, "degree": degree}),
                false,
            ),
            Command::Certify { table } => match std::fs::read_to_string(table) {
                Ok(text) => self.ask(json!({"kind": "certify", "subject": text}), true),
                Err(e) => Outcome::user(format!("{}: {e}", table.display())),
            },
            Command::New { expr } => match self.backend.new_object(&json!({ "expr": expr })) {
                Ok(v) => self.render(&v, render_object),
                Err(e) => self.api_error(&e),
            },
            Command::Explain { target } => {
                let id = if target == "last" {
                    match &self.last_trace {
                        Some(id) => id.clone(),
                        None => return Outcome::user("no trace yet in this session".into()),
                    }
                } else {
                    target.clone()
                };
                match self.backend.trace(&id) {
                    Ok(v) => self.render(&v, render_trace),
                    Err(e) => self.api_error(&e),
                }
            }
            Command::Stats => match self.backend.stats() {
                Ok(v) => self.render(&v, render_stats),
                Err(e) => self.api_error(&e),
            },
            Command::Session => match self.backend.session() {
                Ok(v) => self.render(&v, render_session),
                Err(e) => self.api_error(&e),
            },
            Command::Script { path } => match std::fs::read_to_string(path) {
                Ok(text) if self.depth < 8 => {
                    self.depth += 1;
                    let out = self.run_script(&text);
                    self.depth -= 1;
                    out
                }
                Ok(_) => Outcome::user("scripts nested too deeply".into()),
                Err(e) => Outcome::user(format!("{}: {e}", path.display())),
            },
            Command::Serve { .. } | Command::Repl => {
                Outcome::user("not available inside a session".into())
            }
        }
    }

    /// Runs every line, echoing each command before its output. The exit
    /// code is the worst one seen; later lines still run after a failure.
    pub fn run_script(&mut self, text: &str) -> Outcome {
        let mut out = String::new();
        let mut code = EXIT_OK;
        for line in text.lines() {
            let result = match parse_line(line) {
                Ok(None) => continue,
                Ok(Some(c)) => self.eval(&c),
                Err(e) => Outcome::user(e),
            };
            if !self.json {
                let _ = writeln!(out, "> {}", line.trim());
            }
            out.push_str(&result.text);
            out.push('\n');
            code = code.max(result.code);
        }
        Outcome {
            text: out.trim_end().to_string(),
            code,
        }
    }
}

/// Evaluates one command, returning its rendering and exit code.
pub fn eval_command(c: &Command, session: &mut Session) -> Outcome {
    session.eval(c)
}

fn render_value(v: &JsonValue) -> String {
    match v {
        JsonValue::String(s) => s.clone(),
        JsonValue::Object(o) if o.contains_key("summary") => {
            o["summary"].as_str().unwrap_or("?").to_string()
        }
        other => group_from_json(other).map_or_else(|| other.to_string(), |g| g.to_string()),
    }
}

/// `pi_4(S(4)) = Z   [hes, simplicial]`, with ` (cached)` on cache hits.
pub fn render_answer(v: &JsonValue) -> String {
    let provenance: Vec<&str> = v["provenance"]
        .as_array()
        .map(|a| a.iter().filter_map(JsonValue::as_str).collect())
        .unwrap_or_default();
    let mut s = format!(
        "{} = {}   [{}]",
        v["question"].as_str().unwrap_or("?"),
        render_value(&v["value"]),
        provenance.join(", ")
    );
    if v["cached"].as_bool() == Some(true) {
        s.push_str(" (cached)");
    }
    s
}

fn render_obligation(o: &JsonValue) -> String {
    let axiom = o["axiom"].as_str().unwrap_or("?");
    match o["counterexample"].as_array() {
        Some(w) if o["holds"] == false => {
            let w: Vec<String> = w.iter().map(ToString::to_string).collect();
            format!("{axiom}: fails at ({})", w.join(","))
        }
        _ => format!("{axiom}: holds"),
    }
}

fn render_decorations(d: &JsonValue) -> String {
    let scalar = |v: &JsonValue| match v {
        JsonValue::String(s) => s.clone(),
        JsonValue::Null => "none".to_string(),
        other => other.to_string(),
    };
    format!(
        "{}; contractible: {}; connectivity: {}; dim_bound: {}",
        scalar(&d["object_kind"]),
        scalar(&d["contractible"]),
        scalar(&d["connectivity"]),
        scalar(&d["dim_bound"]),
    )
}

fn render_object(v: &JsonValue) -> String {
    format!(
        "{} := {}   [{}]",
        v["id"].as_str().unwrap_or("?"),
        v["expr"].as_str().unwrap_or("?"),
        render_decorations(&v["decorations"])
    )
}

fn render_trace(v: &JsonValue) -> String {
    let mut s = format!(
        "{} ({}):",
        v["id"].as_str().unwrap_or("?"),
        v["question"].as_str().unwrap_or("?")
    );
    for line in v["lines"].as_array().into_iter().flatten() {
        let _ = write!(s, "\n  {}", line.as_str().unwrap_or(""));
    }
    s
}

fn render_stats(v: &JsonValue) -> String {
    let mut s = String::new();
    for k in v["kernels"].as_array().into_iter().flatten() {
        let _ = writeln!(
            s,
            "{:<11} {:<24} {} invocations",
            k["name"].as_str().unwrap_or("?"),
            k["transport"].as_str().unwrap_or("?"),
            k["invocations"]
        );
    }
    let c = &v["cache"];
    let _ = write!(
        s,
        "cache: {} entries, {} hits, {} misses",
        c["size"], c["hits"], c["misses"]
    );
    s
}

fn render_session(v: &JsonValue) -> String {
    let lines: Vec<String> = v
        .as_array()
        .into_iter()
        .flatten()
        .map(|e| match e["type"].as_str() {
            Some("object") => render_object(e),
            _ => render_answer(e),
        })
        .collect();
    if lines.is_empty() {
        "(empty session)".to_string()
    } else {
        lines.join("\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn session() -> Session {
        Session::local(Arc::new(build_broker(None, &[]).unwrap()), false)
    }

    #[test]
    fn script_lines() {
        assert_eq!(parse_line("  # comment").unwrap(), None);
        assert_eq!(
            parse_line(r#"ask homotopy "D(4)*D(5)" 4"#).unwrap(),
            Some(Command::Ask {
                kind: "homotopy".into(),
                subject: "D(4)*D(5)".into(),
                degree: Some(4)
            })
        );
        assert!(parse_line("frobnicate").is_err());
        assert!(parse_line(r#"ask "S(2)"#).is_err());
    }

    #[test]
    fn exit_codes() {
        let mut s = session();
        let ask = |kind: &str, subject: &str, degree| Command::Ask {
            kind: kind.into(),
            subject: subject.into(),
            degree,
        };
        assert_eq!(s.eval(&ask("homology", "C(5)", Some(5))).code, EXIT_OK);
        assert_eq!(s.eval(&ask("homology", "S(2", Some(1))).code, EXIT_USER);
        assert_eq!(s.eval(&ask("homology", "S(2)", None)).code, EXIT_USER);
        assert_eq!(
            s.eval(&Command::Explain {
                target: "t7".into()
            })
            .code,
            EXIT_USER
        );
    }

    #[test]
    fn explain_last_requires_a_trace() {
        let mut s = session();
        assert_eq!(
            s.eval(&Command::Explain {
                target: "last".into()
            })
            .code,
            EXIT_USER
        );
        s.eval(&Command::Ask {
            kind: "homotopy".into(),
            subject: "S(4)".into(),
            degree: Some(2),
        });
        let out = s.eval(&Command::Explain {
            target: "last".into(),
        });
        assert_eq!(out.code, EXIT_OK);
        assert!(out.text.contains("R7: k-connected"), "{}", out.text);
    }

    #[test]
    fn remote_specs() {
        assert_eq!(
            parse_remote("grouphom=localhost:26133").unwrap().0,
            "grouphom"
        );
        assert!(parse_remote("grouphom").is_err());
        assert!(build_broker(None, &[("gap".into(), "h:1".into())]).is_err());
    }
}
