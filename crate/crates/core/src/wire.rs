//! SCSCP-style framed sessions carrying encoded terms over a byte stream.
//!
//! A frame is `<?scscp start ?>\n` + payload + `\n<?scscp end ?>\n`. A session
//! opens with the server announcing itself and the client choosing a
//! version; after that every frame holds one OpenMath-encoded message:
//!
//! ```text
//! proto1.procedure_call(proc, arg1, .., argN, proto1.call_id("c1"))
//! proto1.procedure_completed(proto1.call_id("c1"), result)
//! proto1.procedure_terminated(proto1.call_id("c1"), "code: human text")
//! ```
//!
//! One call is outstanding per connection at a time.

use std::io::{self, BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use thiserror::Error;

use crate::term::{self, Symbol, Term, TermError};

pub const VERSION: &str = "1.3";
pub const SERVICE_NAME: &str = "topobroker";
pub const DEFAULT_PORT: u16 = 26133;
/// Environment variable overriding [`DEFAULT_PORT`].
pub const PORT_ENV: &str = "TOPOBROKER_PORT";

pub const UNKNOWN_PROCEDURE: &str = "unknown_procedure";
pub const SYSTEM_SPECIFIC: &str = "system_specific";

const START: &str = "<?scscp start ?>";
const END: &str = "<?scscp end ?>";

#[derive(Debug, Error)]
pub enum WireError {
    #[error("framing error: {0}")]
    Framing(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("connection closed in the middle of a frame")]
    Truncated,
    #[error("connection closed")]
    Eof,
    #[error("peer quit: {0}")]
    Quit(String),
    #[error("unsupported protocol version {0:?}")]
    UnsupportedVersion(String),
    #[error(transparent)]
    Term(#[from] TermError),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl WireError {
    /// Errors meaning the peer is gone rather than misbehaving.
    pub fn is_transport(&self) -> bool {
        matches!(
            self,
            WireError::Truncated | WireError::Eof | WireError::Quit(_) | WireError::Io(_)
        )
    }
}

pub fn frame(payload: &str) -> Result<String, WireError> {
    if payload.contains(START) || payload.contains(END) {
        return Err(WireError::Framing(
            "payload contains a frame delimiter".into(),
        ));
    }
    Ok(format!("{START}\n{payload}\n{END}\n"))
}

/// Reads the next frame's payload, skipping blank lines between frames.
pub fn deframe<R: BufRead>(reader: &mut R) -> Result<String, WireError> {
    let mut line = String::new();
    loop {
        line.clear();
        if read_line(reader, &mut line)? == 0 {
            return Err(WireError::Eof);
        }
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if !line.ends_with('\n') && START.starts_with(trimmed) {
            return Err(WireError::Truncated);
        }
        if trimmed == START && line.ends_with('\n') {
            break;
        }
        if let Some(attrs) = processing_instruction(trimmed) {
            if attrs.first().map(|(k, _)| k.as_str()) == Some("quit") {
                let reason = attrs
                    .iter()
                    .find(|(k, _)| k == "reason")
                    .map_or_else(String::new, |(_, v)| v.clone());
                return Err(WireError::Quit(reason));
            }
        }
        return Err(WireError::Protocol(format!(
            "unexpected data before frame start: {trimmed:?}"
        )));
    }
    let mut lines: Vec<String> = Vec::new();
    loop {
        line.clear();
        if read_line(reader, &mut line)? == 0 || !line.ends_with('\n') {
            return Err(WireError::Truncated);
        }
        line.pop();
        if line == END {
            return Ok(lines.join("\n"));
        }
        lines.push(std::mem::take(&mut line));
    }
}

fn read_line<R: BufRead>(reader: &mut R, buf: &mut String) -> Result<usize, WireError> {
    reader.read_line(buf).map_err(|e| match e.kind() {
        io::ErrorKind::InvalidData => WireError::Protocol("frame is not UTF-8".into()),
        _ => WireError::Io(e),
    })
}

/// Parses `<?scscp a="x" b="y" ?>`. Bare words become keys with empty values.
fn processing_instruction(line: &str) -> Option<Vec<(String, String)>> {
    let body = line.strip_prefix("<?scscp")?.strip_suffix("?>")?;
    let mut out = Vec::new();
    let mut rest = body.trim_start();
    while !rest.is_empty() {
        let key_end = rest
            .find(|c: char| c == '=' || c.is_whitespace())
            .unwrap_or(rest.len());
        let key = rest[..key_end].to_string();
        rest = &rest[key_end..];
        if let Some(after) = rest.strip_prefix("=\"") {
            let close = after.find('"')?;
            out.push((key, after[..close].to_string()));
            rest = &after[close + 1..];
        } else {
            out.push((key, String::new()));
        }
        rest = rest.trim_start();
    }
    Some(out)
}

fn attribute<'a>(attrs: &'a [(String, String)], key: &str) -> Option<&'a str> {
    attrs
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    Call {
        call_id: String,
        procedure: Symbol,
        args: Vec<Term>,
    },
    Completed {
        call_id: String,
        result: Term,
    },
    Terminated {
        call_id: String,
        code: String,
        text: String,
    },
}

impl Message {
    pub fn terminated(call_id: &str, code: &str, text: impl Into<String>) -> Message {
        Message::Terminated {
            call_id: call_id.to_string(),
            code: code.to_string(),
            text: text.into(),
        }
    }

    pub fn call_id(&self) -> &str {
        match self {
            Message::Call { call_id, .. }
            | Message::Completed { call_id, .. }
            | Message::Terminated { call_id, .. } => call_id,
        }
    }

    pub fn to_term(&self) -> Term {
        let id = |c: &str| Term::apply("proto1", "call_id", vec![Term::str(c)]);
        match self {
            Message::Call {
                call_id,
                procedure,
                args,
            } => {
                let mut all = Vec::with_capacity(args.len() + 2);
                all.push(Term::Symbol(procedure.clone()));
                all.extend(args.iter().cloned());
                all.push(id(call_id));
                Term::apply("proto1", "procedure_call", all)
            }
            Message::Completed { call_id, result } => Term::apply(
                "proto1",
                "procedure_completed",
                vec![id(call_id), result.clone()],
            ),
            Message::Terminated {
                call_id,
                code,
                text,
            } => Term::apply(
                "proto1",
                "procedure_terminated",
                vec![id(call_id), Term::str(format!("{code}: {text}"))],
            ),
        }
    }

    pub fn from_term(t: &Term) -> Result<Message, WireError> {
        let bad = |what: &str| WireError::Protocol(format!("malformed {what}"));
        let call_id = |t: &Term| match t.args() {
            [Term::Str(id)] if t.is("proto1", "call_id") && !id.is_empty() => Ok(id.clone()),
            _ => Err(bad("call id")),
        };
        let args = t.args();
        if t.is("proto1", "procedure_call") {
            let (Some(Term::Symbol(procedure)), Some(last)) = (args.first(), args.last()) else {
                return Err(bad("procedure call"));
            };
            Ok(Message::Call {
                call_id: call_id(last)?,
                procedure: procedure.clone(),
                args: args[1..args.len() - 1].to_vec(),
            })
        } else if t.is("proto1", "procedure_completed") {
            Ok(Message::Completed {
                call_id: call_id(&args[0])?,
                result: args[1].clone(),
            })
        } else if t.is("proto1", "procedure_terminated") {
            let Term::Str(body) = &args[1] else {
                return Err(bad("termination"));
            };
            let (code, text) = body.split_once(": ").unwrap_or((body.as_str(), ""));
            Ok(Message::Terminated {
                call_id: call_id(&args[0])?,
                code: code.to_string(),
                text: text.to_string(),
            })
        } else {
            Err(bad("message"))
        }
    }

    pub fn encode(&self) -> Result<String, WireError> {
        Ok(term::encode(&self.to_term())?)
    }

    pub fn decode(payload: &str) -> Result<Message, WireError> {
        Message::from_term(&term::decode(payload)?)
    }
}

/// A framed byte-stream connection.
pub struct Connection<R, W> {
    reader: R,
    writer: W,
}

pub type TcpConnection = Connection<BufReader<TcpStream>, TcpStream>;

impl TcpConnection {
    pub fn tcp(stream: TcpStream) -> io::Result<TcpConnection> {
        let reader = BufReader::new(stream.try_clone()?);
        Ok(Connection::new(reader, stream))
    }
}

impl<R: BufRead, W: Write> Connection<R, W> {
    pub fn new(reader: R, writer: W) -> Self {
        Connection { reader, writer }
    }

    pub fn into_parts(self) -> (R, W) {
        (self.reader, self.writer)
    }

    fn write_raw(&mut self, bytes: &str) -> Result<(), WireError> {
        self.writer.write_all(bytes.as_bytes())?;
        self.writer.flush()?;
        Ok(())
    }

    fn read_instruction(&mut self) -> Result<Vec<(String, String)>, WireError> {
        let mut line = String::new();
        loop {
            line.clear();
            if read_line(&mut self.reader, &mut line)? == 0 {
                return Err(WireError::Eof);
            }
            if !line.trim().is_empty() {
                break;
            }
        }
        processing_instruction(line.trim()).ok_or_else(|| {
            WireError::Protocol(format!(
                "expected a protocol instruction, got {:?}",
                line.trim()
            ))
        })
    }

    pub fn send(&mut self, m: &Message) -> Result<(), WireError> {
        let framed = frame(&m.encode()?)?;
        self.write_raw(&framed)
    }

    pub fn recv(&mut self) -> Result<Message, WireError> {
        Message::decode(&deframe(&mut self.reader)?)
    }

    /// Server side of connection initiation. On an unsupported version the
    /// server says why and the caller should drop the connection.
    pub fn negotiate_server(&mut self) -> Result<String, WireError> {
        self.write_raw(&format!(
            "<?scscp service_name=\"{SERVICE_NAME}\" scscp_versions=\"{VERSION}\" ?>\n"
        ))?;
        let attrs = self.read_instruction()?;
        if let Some(reason) = attribute(&attrs, "reason").filter(|_| attrs[0].0 == "quit") {
            return Err(WireError::Quit(reason.to_string()));
        }
        let version = attribute(&attrs, "version")
            .ok_or_else(|| WireError::Protocol("expected a version choice".into()))?;
        if version != VERSION {
            self.write_raw("<?scscp quit reason=\"unsupported version\" ?>\n")?;
            return Err(WireError::UnsupportedVersion(version.to_string()));
        }
        Ok(version.to_string())
    }

    /// Client side: reads the server announcement and requests `version`.
    pub fn negotiate_client(&mut self, version: &str) -> Result<String, WireError> {
        let attrs = self.read_instruction()?;
        let versions = attribute(&attrs, "scscp_versions")
            .filter(|_| attribute(&attrs, "service_name").is_some())
            .ok_or_else(|| WireError::Protocol("server did not announce a service".into()))?;
        if !versions.split_whitespace().any(|v| v == VERSION) {
            return Err(WireError::UnsupportedVersion(versions.to_string()));
        }
        self.write_raw(&format!("<?scscp version=\"{version}\" ?>\n"))?;
        Ok(version.to_string())
    }
}

/// Client end of a negotiated session; numbers its calls `c1`, `c2`, ...
pub struct Client<R, W> {
    conn: Connection<R, W>,
    issued: u64,
}

impl Client<BufReader<TcpStream>, TcpStream> {
    pub fn connect(addr: &str, timeout: Duration) -> Result<Self, WireError> {
        let sock = addr
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| WireError::Protocol(format!("cannot resolve {addr}")))?;
        let stream = TcpStream::connect_timeout(&sock, timeout)?;
        stream.set_nodelay(true)?;
        Client::start(TcpConnection::tcp(stream)?)
    }
}

impl<R: BufRead, W: Write> Client<R, W> {
    pub fn start(mut conn: Connection<R, W>) -> Result<Self, WireError> {
        conn.negotiate_client(VERSION)?;
        Ok(Client { conn, issued: 0 })
    }

    /// Sends one call and waits for its reply. Transport failures come back
    /// as a `system_specific` termination.
    pub fn call(&mut self, procedure: &Symbol, args: Vec<Term>) -> Result<Message, WireError> {
        self.issued += 1;
        let call_id = format!("c{}", self.issued);
        let call = Message::Call {
            call_id: call_id.clone(),
            procedure: procedure.clone(),
            args,
        };
        match self.conn.send(&call) {
            Ok(()) => {}
            Err(e) if e.is_transport() => {
                return Ok(Message::terminated(
                    &call_id,
                    SYSTEM_SPECIFIC,
                    e.to_string(),
                ))
            }
            Err(e) => return Err(e),
        }
        self.recv_reply(&call_id)
    }

    pub fn recv_reply(&mut self, call_id: &str) -> Result<Message, WireError> {
        match self.conn.recv() {
            Ok(Message::Call { .. }) => {
                Err(WireError::Protocol("server sent a procedure call".into()))
            }
            Ok(m) if m.call_id() == call_id => Ok(m),
            Ok(m) => Err(WireError::Protocol(format!(
                "reply for unknown call id {:?}",
                m.call_id()
            ))),
            Err(e) if e.is_transport() => {
                Ok(Message::terminated(call_id, SYSTEM_SPECIFIC, e.to_string()))
            }
            Err(e) => Err(e),
        }
    }
}

/// A procedure failure reported to the caller.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Failure {
    pub code: String,
    pub text: String,
}

impl Failure {
    pub fn new(code: &str, text: impl Into<String>) -> Failure {
        Failure {
            code: code.to_string(),
            text: text.into(),
        }
    }
}

/// What a server does with procedure calls.
pub trait Procedures: Send + Sync {
    fn handle(&self, procedure: &Symbol, args: &[Term]) -> Result<Term, Failure>;
}

/// Runs one server session to completion: negotiation, then one reply per
/// call until the client disconnects.
pub fn serve_connection<R: BufRead, W: Write>(
    conn: &mut Connection<R, W>,
    handler: &dyn Procedures,
) -> Result<(), WireError> {
    conn.negotiate_server()?;
    loop {
        let payload = match deframe(&mut conn.reader) {
            Ok(p) => p,
            Err(WireError::Eof | WireError::Quit(_)) => return Ok(()),
            Err(e) => return Err(e),
        };
        let reply = match Message::decode(&payload) {
            Ok(Message::Call {
                call_id,
                procedure,
                args,
            }) => match handler.handle(&procedure, &args) {
                Ok(result) => Message::Completed { call_id, result },
                Err(f) => Message::Terminated {
                    call_id,
                    code: f.code,
                    text: f.text,
                },
            },
            Ok(other) => Message::terminated(
                other.call_id(),
                SYSTEM_SPECIFIC,
                "expected a procedure call",
            ),
            Err(e) => Message::terminated("unknown", SYSTEM_SPECIFIC, e.to_string()),
        };
        conn.send(&reply)?;
    }
}

/// Accepts connections forever, one thread per session.
pub fn serve_tcp(listener: TcpListener, handler: Arc<dyn Procedures>) -> io::Result<()> {
    for stream in listener.incoming() {
        let stream = stream?;
        let handler = Arc::clone(&handler);
        thread::spawn(move || {
            let peer = stream
                .peer_addr()
                .map(|a| a.to_string())
                .unwrap_or_default();
            let result = TcpConnection::tcp(stream)
                .map_err(WireError::from)
                .and_then(|mut conn| serve_connection(&mut conn, handler.as_ref()));
            match result {
                Ok(()) => log::debug!("session with {peer} closed"),
                Err(e) => log::warn!("session with {peer} ended: {e}"),
            }
        });
    }
    Ok(())
}

/// Shared record of the bytes written by both ends of a session, each line
/// prefixed with the side that wrote it.
#[derive(Debug, Clone, Default)]
pub struct Transcript(Arc<Mutex<String>>);

impl Transcript {
    pub fn text(&self) -> String {
        self.0.lock().expect("transcript lock").clone()
    }

    pub fn tee<W: Write>(&self, side: &'static str, inner: W) -> Tee<W> {
        Tee {
            inner,
            side,
            log: self.clone(),
            at_line_start: true,
        }
    }
}

pub struct Tee<W> {
    inner: W,
    side: &'static str,
    log: Transcript,
    at_line_start: bool,
}

impl<W: Write> Write for Tee<W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        // Hold the log across the write so the peer cannot read these bytes,
        // reply, and record its reply before they are recorded here.
        let mut log = self.log.0.lock().expect("transcript lock");
        let n = self.inner.write(buf)?;
        for ch in String::from_utf8_lossy(&buf[..n]).chars() {
            if self.at_line_start {
                log.push_str(self.side);
                log.push_str(": ");
            }
            log.push(ch);
            self.at_line_start = ch == '\n';
        }
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}
