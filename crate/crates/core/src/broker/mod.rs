//! The mediator: a decorated object store, routing of questions to
//! registered kernels, memoization of answers, and sub-questions between
//! kernels with cycle protection.

mod kernels;
mod remote;

use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use thiserror::Error;

pub use kernels::{CertifierKernel, GroupHomKernel, HesKernel, SimplicialKernel};
pub use remote::{serve, BrokerProcedures, RemoteKernel};

use crate::certifier::{CertReport, MultiplicationTable};
use crate::expr::render;
use crate::grouphom::GroupExpr;
use crate::hes::{Fact, RuleBase, Trace};
use crate::simplicial::SpaceExpr;
use crate::snf::FgAbelianGroup;
use crate::term::{canonical_key, Term};

/// Longest chain of nested sub-questions.
pub const MAX_DEPTH: usize = 16;
/// Largest degree a question may ask about.
pub const MAX_DEGREE: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BrokerError {
    #[error("invalid question: {0}")]
    InvalidQuestion(String),
    #[error("invalid object: {0}")]
    InvalidObject(String),
    #[error("kernel {0:?} is already registered")]
    DuplicateKernel(String),
    #[error("no kernel accepts {0}")]
    Unroutable(String),
    #[error("kernel {kernel} failed: {message}")]
    Computation { kernel: String, message: String },
    #[error("dependency cycle at {question} (depth {depth})")]
    Cycle { question: String, depth: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QuestionKind {
    Homology,
    Homotopy,
    Certify,
}

impl QuestionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            QuestionKind::Homology => "homology",
            QuestionKind::Homotopy => "homotopy",
            QuestionKind::Certify => "certify",
        }
    }
}

impl std::str::FromStr for QuestionKind {
    type Err = BrokerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "homology" => Ok(QuestionKind::Homology),
            "homotopy" => Ok(QuestionKind::Homotopy),
            "certify" => Ok(QuestionKind::Certify),
            other => Err(BrokerError::InvalidQuestion(format!(
                "unknown question kind {other:?}"
            ))),
        }
    }
}

impl fmt::Display for QuestionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Question {
    pub kind: QuestionKind,
    pub subject: Term,
    /// Ignored for certification.
    pub degree: usize,
}

fn is_group(t: &Term) -> bool {
    GroupExpr::from_term(t).is_ok()
}

fn is_space(t: &Term) -> bool {
    SpaceExpr::from_term(t).is_ok()
}

impl Question {
    pub fn new(kind: QuestionKind, subject: Term, degree: usize) -> Question {
        let degree = if kind == QuestionKind::Certify {
            0
        } else {
            degree
        };
        Question {
            kind,
            subject,
            degree,
        }
    }

    pub fn homology(subject: Term, degree: usize) -> Question {
        Question::new(QuestionKind::Homology, subject, degree)
    }

    pub fn homotopy(subject: Term, degree: usize) -> Question {
        Question::new(QuestionKind::Homotopy, subject, degree)
    }

    pub fn certify(table: &MultiplicationTable) -> Question {
        Question::new(QuestionKind::Certify, table.to_term(), 0)
    }

    pub fn validate(&self) -> Result<(), BrokerError> {
        let invalid = |m: String| Err(BrokerError::InvalidQuestion(m));
        if self.degree > MAX_DEGREE {
            return invalid(format!("degree {} exceeds {MAX_DEGREE}", self.degree));
        }
        match self.kind {
            QuestionKind::Homology if is_space(&self.subject) || is_group(&self.subject) => Ok(()),
            QuestionKind::Homology => invalid(format!(
                "{} is neither a space nor a group",
                render(&self.subject)
            )),
            QuestionKind::Homotopy if is_space(&self.subject) => Ok(()),
            QuestionKind::Homotopy => invalid(format!("{} is not a space", render(&self.subject))),
            QuestionKind::Certify => MultiplicationTable::from_term(&self.subject)
                .map(|_| ())
                .map_err(|e| BrokerError::InvalidQuestion(e.to_string())),
        }
    }

    /// The question as a term; its canonical key is the cache key.
    pub fn to_term(&self) -> Term {
        let n = || Term::int(self.degree as u64);
        match self.kind {
            QuestionKind::Homology if is_group(&self.subject) => {
                Term::apply("grp1", "group_homology", vec![self.subject.clone(), n()])
            }
            QuestionKind::Homology => {
                Term::apply("algtop1", "homology", vec![self.subject.clone(), n()])
            }
            QuestionKind::Homotopy => {
                Term::apply("algtop1", "homotopy_group", vec![self.subject.clone(), n()])
            }
            QuestionKind::Certify => Term::apply("cert1", "certify", vec![self.subject.clone()]),
        }
    }

    pub fn from_term(t: &Term) -> Result<Question, BrokerError> {
        let degree = |a: &Term| {
            a.as_integer()
                .and_then(|v| usize::try_from(v).ok())
                .ok_or_else(|| {
                    BrokerError::InvalidQuestion("degree must be a non-negative integer".into())
                })
        };
        let q = match t.args() {
            [x, n] if t.is("algtop1", "homology") => Question::homology(x.clone(), degree(n)?),
            [g, n] if t.is("grp1", "group_homology") && is_group(g) => {
                Question::homology(g.clone(), degree(n)?)
            }
            [x, n] if t.is("algtop1", "homotopy_group") => {
                Question::homotopy(x.clone(), degree(n)?)
            }
            [table] if t.is("cert1", "certify") => {
                Question::new(QuestionKind::Certify, table.clone(), 0)
            }
            _ => {
                let what = t
                    .head()
                    .map_or_else(|| format!("{t:?}"), ToString::to_string);
                return Err(BrokerError::Unroutable(what));
            }
        };
        q.validate()?;
        Ok(q)
    }

    /// Human rendering: `H_5(C(5))`, `pi_4(S(4))`, `certify(table of order 4)`.
    pub fn describe(&self) -> String {
        match self.kind {
            QuestionKind::Homology => format!("H_{}({})", self.degree, render(&self.subject)),
            QuestionKind::Homotopy => format!("pi_{}({})", self.degree, render(&self.subject)),
            QuestionKind::Certify => match MultiplicationTable::from_term(&self.subject) {
                Ok(t) => format!("certify(table of order {})", t.order()),
                Err(_) => "certify(?)".to_string(),
            },
        }
    }
}

impl fmt::Display for Question {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.describe())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Value {
    Group(FgAbelianGroup),
    Unknown,
    Certificate(CertReport),
}

impl Value {
    /// `res1.fg_abelian(rank, "d1 d2 ..")`, `res1.unknown` or `cert1.report(..)`.
    pub fn to_term(&self) -> Term {
        match self {
            Value::Group(g) => Term::apply(
                "res1",
                "fg_abelian",
                vec![
                    Term::int(g.rank() as u64),
                    Term::str(
                        g.torsion()
                            .iter()
                            .map(ToString::to_string)
                            .collect::<Vec<_>>()
                            .join(" "),
                    ),
                ],
            ),
            Value::Unknown => Term::sym("res1", "unknown"),
            Value::Certificate(r) => r.to_term(),
        }
    }

    pub fn from_term(t: &Term) -> Result<Value, String> {
        if t.is("res1", "unknown") {
            return Ok(Value::Unknown);
        }
        if t.is("cert1", "report") {
            return CertReport::from_term(t)
                .map(Value::Certificate)
                .map_err(|e| e.to_string());
        }
        match t.args() {
            [rank, Term::Str(torsion)] if t.is("res1", "fg_abelian") => {
                let rank = rank
                    .as_integer()
                    .and_then(|r| usize::try_from(r).ok())
                    .ok_or("rank must be a non-negative integer")?;
                let torsion = torsion
                    .split_whitespace()
                    .map(|d| {
                        d.parse()
                            .map_err(|_| format!("bad torsion coefficient {d:?}"))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                FgAbelianGroup::from_invariants(rank, torsion)
                    .map(Value::Group)
                    .ok_or_else(|| "torsion is not an invariant-factor chain".to_string())
            }
            _ => Err(format!("not a result term: {}", render(t))),
        }
    }

    pub fn as_group(&self) -> Option<&FgAbelianGroup> {
        match self {
            Value::Group(g) => Some(g),
            _ => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Group(g) => write!(f, "{g}"),
            Value::Unknown => f.write_str("unknown"),
            Value::Certificate(r) => write!(f, "{r}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Answer {
    pub value: Value,
    /// Kernels consulted, the answering kernel first.
    pub provenance: Vec<String>,
    pub trace_id: Option<String>,
    pub cached: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectKind {
    Space,
    Group,
}

impl ObjectKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ObjectKind::Space => "space",
            ObjectKind::Group => "group",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tri {
    Yes,
    No,
    Unknown,
}

impl Tri {
    pub fn as_str(self) -> &'static str {
        match self {
            Tri::Yes => "yes",
            Tri::No => "no",
            Tri::Unknown => "unknown",
        }
    }
}

/// All homotopy groups vanish for `1 <= k <= connectivity`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Finite(i64),
    Infinite,
}

impl Connectivity {
    fn min(self, other: Connectivity) -> Connectivity {
        match (self, other) {
            (Connectivity::Infinite, c) | (c, Connectivity::Infinite) => c,
            (Connectivity::Finite(a), Connectivity::Finite(b)) => Connectivity::Finite(a.min(b)),
        }
    }
}

impl fmt::Display for Connectivity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Connectivity::Finite(k) => write!(f, "{k}"),
            Connectivity::Infinite => f.write_str("infinity"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoration {
    pub object_kind: ObjectKind,
    pub contractible: Tri,
    pub connectivity: Connectivity,
    pub dim_bound: Option<u64>,
}

/// Decorations from constructor rules alone.
pub fn decorate(expr: &Term) -> Result<Decoration, BrokerError> {
    if is_group(expr) {
        return Ok(Decoration {
            object_kind: ObjectKind::Group,
            contractible: Tri::Unknown,
            connectivity: Connectivity::Finite(-1),
            dim_bound: None,
        });
    }
    let space =
        SpaceExpr::from_term(expr).map_err(|e| BrokerError::InvalidObject(e.to_string()))?;
    Ok(decorate_space(&space))
}

fn decorate_space(e: &SpaceExpr) -> Decoration {
    let space = |contractible, connectivity, dim_bound| Decoration {
        object_kind: ObjectKind::Space,
        contractible,
        connectivity,
        dim_bound,
    };
    match e {
        SpaceExpr::Simplex(n) => space(Tri::Yes, Connectivity::Infinite, Some(u64::from(*n))),
        SpaceExpr::Sphere(n) => space(
            Tri::No,
            Connectivity::Finite(i64::from(*n) - 1),
            Some(u64::from(*n)),
        ),
        SpaceExpr::Rp2 => space(Tri::No, Connectivity::Finite(0), Some(2)),
        SpaceExpr::EmSpace(g, _) if g.is_trivial() => space(Tri::Yes, Connectivity::Infinite, None),
        SpaceExpr::EmSpace(_, n) => space(Tri::No, Connectivity::Finite(i64::from(*n) - 1), None),
        SpaceExpr::Product(a, b) => {
            let (a, b) = (decorate_space(a), decorate_space(b));
            let contractible = match (a.contractible, b.contractible) {
                (Tri::Yes, Tri::Yes) => Tri::Yes,
                (Tri::No, _) | (_, Tri::No) => Tri::No,
                _ => Tri::Unknown,
            };
            let connectivity = if contractible == Tri::Yes {
                Connectivity::Infinite
            } else {
                a.connectivity.min(b.connectivity)
            };
            let dim_bound = a.dim_bound.zip(b.dim_bound).map(|(x, y)| x + y);
            space(contractible, connectivity, dim_bound)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoredObject {
    pub id: String,
    pub expr: Term,
    pub decoration: Decoration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredTrace {
    pub question: Question,
    pub derivation: Derivation,
}

/// A rule trace together with the working memory it started from.
#[derive(Debug, Clone, PartialEq)]
pub struct Derivation {
    pub trace: Trace,
    pub initial_facts: Vec<Fact>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SessionEntry {
    Object(StoredObject),
    Question { question: Question, answer: Answer },
}

// ---------------------------------------------------------------------------
// Kernels

pub struct KernelAnswer {
    pub value: Value,
    pub derivation: Option<Derivation>,
}

impl KernelAnswer {
    pub fn value(value: Value) -> KernelAnswer {
        KernelAnswer {
            value,
            derivation: None,
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum KernelError {
    #[error("{0}")]
    Failed(String),
    /// A sub-question failed; passed through unchanged.
    #[error(transparent)]
    Broker(#[from] BrokerError),
}

/// The channel through which a kernel asks other kernels.
pub trait SubQuery {
    fn ask(&mut self, q: Question) -> Result<Answer, BrokerError>;
}

pub trait Kernel: Send + Sync {
    fn answer(&self, q: &Question, sub: &mut dyn SubQuery) -> Result<KernelAnswer, KernelError>;
}

pub type Accepts = Arc<dyn Fn(QuestionKind, &Term) -> bool + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Transport {
    InProcess,
    Remote(String),
}

impl fmt::Display for Transport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Transport::InProcess => f.write_str("in-process"),
            Transport::Remote(endpoint) => write!(f, "remote({endpoint})"),
        }
    }
}

#[derive(Clone)]
pub struct KernelDescriptor {
    pub name: String,
    pub accepts: Accepts,
    pub transport: Transport,
    pub kernel: Arc<dyn Kernel>,
}

impl KernelDescriptor {
    pub fn new(name: &str, accepts: Accepts, kernel: Arc<dyn Kernel>) -> Self {
        KernelDescriptor {
            name: name.to_string(),
            accepts,
            transport: Transport::InProcess,
            kernel,
        }
    }

    /// A kernel served by a remote broker, connected on first use.
    pub fn remote(name: &str, accepts: Accepts, endpoint: &str) -> Self {
        KernelDescriptor {
            name: name.to_string(),
            accepts,
            transport: Transport::Remote(endpoint.to_string()),
            kernel: Arc::new(RemoteKernel::new(endpoint)),
        }
    }
}

/// Names of the standard kernels, in registration order.
pub const DEFAULT_KERNELS: [&str; 4] = ["simplicial", "grouphom", "hes", "certifier"];

fn is_em_space_level_one(t: &Term) -> bool {
    t.is("algtop1", "em_space") && t.args().get(1).and_then(Term::as_i64) == Some(1)
}

/// The routing predicate of a standard kernel.
pub fn default_accepts(name: &str) -> Option<Accepts> {
    let accepts: Accepts = match name {
        "simplicial" => Arc::new(|k, s: &Term| {
            k == QuestionKind::Homology && !is_em_space_level_one(s) && !is_group(s)
        }),
        "grouphom" => Arc::new(|k, s: &Term| {
            k == QuestionKind::Homology && (is_em_space_level_one(s) || is_group(s))
        }),
        "hes" => Arc::new(|k, _: &Term| k == QuestionKind::Homotopy),
        "certifier" => Arc::new(|k, _: &Term| k == QuestionKind::Certify),
        _ => return None,
    };
    Some(accepts)
}

/// In-process descriptor of a standard kernel.
pub fn default_kernel(name: &str, rules: &Arc<RuleBase>) -> Option<KernelDescriptor> {
    let kernel: Arc<dyn Kernel> = match name {
        "simplicial" => Arc::new(SimplicialKernel),
        "grouphom" => Arc::new(GroupHomKernel),
        "hes" => Arc::new(HesKernel::new(Arc::clone(rules))),
        "certifier" => Arc::new(CertifierKernel),
        _ => return None,
    };
    Some(KernelDescriptor::new(name, default_accepts(name)?, kernel))
}

// ---------------------------------------------------------------------------
// Broker

struct Registered {
    descriptor: KernelDescriptor,
    invocations: AtomicU64,
}

struct CacheEntry {
    answer: Answer,
    hits: AtomicU64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KernelStats {
    pub name: String,
    pub transport: Transport,
    pub invocations: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stats {
    pub kernels: Vec<KernelStats>,
    pub cache_size: usize,
    pub hits: u64,
    pub misses: u64,
    /// Cache keys with their hit counts, sorted by key.
    pub entries: Vec<(String, u64)>,
}

#[derive(Default)]
pub struct Broker {
    kernels: RwLock<Vec<Registered>>,
    cache: RwLock<HashMap<String, CacheEntry>>,
    hits: AtomicU64,
    misses: AtomicU64,
    objects: RwLock<Vec<StoredObject>>,
    traces: RwLock<HashMap<String, StoredTrace>>,
    trace_count: AtomicU64,
    session: Mutex<Vec<SessionEntry>>,
}

impl Broker {
    pub fn new() -> Broker {
        Broker::default()
    }

    /// A broker with the four standard in-process kernels.
    pub fn with_default_kernels(rules: Arc<RuleBase>) -> Broker {
        let b = Broker::new();
        for name in DEFAULT_KERNELS {
            b.register_kernel(default_kernel(name, &rules).expect("standard kernel"))
                .expect("distinct standard names");
        }
        b
    }

    pub fn register_kernel(&self, d: KernelDescriptor) -> Result<(), BrokerError> {
        let mut kernels = self.kernels.write().expect("kernel registry lock");
        if kernels.iter().any(|r| r.descriptor.name == d.name) {
            return Err(BrokerError::DuplicateKernel(d.name));
        }
        kernels.push(Registered {
            descriptor: d,
            invocations: AtomicU64::new(0),
        });
        Ok(())
    }

    /// Name of the first registered kernel accepting `q`.
    pub fn route(&self, q: &Question) -> Result<String, BrokerError> {
        let kernels = self.kernels.read().expect("kernel registry lock");
        route_index(&kernels, q).map(|i| kernels[i].descriptor.name.clone())
    }

    /// Answers a question, from the cache when possible.
    pub fn ask(&self, q: &Question) -> Result<Answer, BrokerError> {
        let mut stack = Vec::new();
        let answer = self.ask_within(q, &mut stack)?;
        self.session
            .lock()
            .expect("session lock")
            .push(SessionEntry::Question {
                question: q.clone(),
                answer: answer.clone(),
            });
        Ok(answer)
    }

    fn ask_within(&self, q: &Question, stack: &mut Vec<String>) -> Result<Answer, BrokerError> {
        q.validate()?;
        let key =
            canonical_key(&q.to_term()).map_err(|e| BrokerError::InvalidQuestion(e.to_string()))?;
        if let Some(entry) = self.cache.read().expect("cache lock").get(&key) {
            entry.hits.fetch_add(1, Ordering::SeqCst);
            self.hits.fetch_add(1, Ordering::SeqCst);
            return Ok(Answer {
                cached: true,
                ..entry.answer.clone()
            });
        }
        if stack.contains(&key) || stack.len() >= MAX_DEPTH {
            return Err(BrokerError::Cycle {
                question: q.describe(),
                depth: stack.len() + 1,
            });
        }

        let (name, kernel) = {
            let kernels = self.kernels.read().expect("kernel registry lock");
            let r = &kernels[route_index(&kernels, q)?];
            r.invocations.fetch_add(1, Ordering::SeqCst);
            (r.descriptor.name.clone(), Arc::clone(&r.descriptor.kernel))
        };
        self.misses.fetch_add(1, Ordering::SeqCst);
        log::debug!("{} -> {name}", q.describe());

        stack.push(key.clone());
        let mut sub = Nested {
            broker: self,
            stack,
            provenance: Vec::new(),
        };
        let result = kernel.answer(q, &mut sub);
        let consulted = std::mem::take(&mut sub.provenance);
        stack.pop();

        let KernelAnswer { value, derivation } = result.map_err(|e| match e {
            KernelError::Broker(b) => b,
            KernelError::Failed(message) => BrokerError::Computation {
                kernel: name.clone(),
                message,
            },
        })?;
        let mut provenance = vec![name];
        for k in consulted {
            if !provenance.contains(&k) {
                provenance.push(k);
            }
        }
        let trace_id = derivation.map(|d| self.store_trace(q, d));
        let answer = Answer {
            value,
            provenance,
            trace_id,
            cached: false,
        };
        let mut cache = self.cache.write().expect("cache lock");
        // A concurrent ask may have finished first; keep the original.
        let entry = cache.entry(key).or_insert_with(|| CacheEntry {
            answer: answer.clone(),
            hits: AtomicU64::new(0),
        });
        Ok(entry.answer.clone())
    }

    fn store_trace(&self, q: &Question, derivation: Derivation) -> String {
        let id = format!("t{}", self.trace_count.fetch_add(1, Ordering::SeqCst) + 1);
        self.traces.write().expect("trace lock").insert(
            id.clone(),
            StoredTrace {
                question: q.clone(),
                derivation,
            },
        );
        id
    }

    pub fn trace(&self, id: &str) -> Option<StoredTrace> {
        self.traces.read().expect("trace lock").get(id).cloned()
    }

    /// Stores a space or group expression with its decorations.
    pub fn new_object(&self, expr: Term) -> Result<StoredObject, BrokerError> {
        let decoration = decorate(&expr)?;
        let obj = {
            let mut objects = self.objects.write().expect("object lock");
            let obj = StoredObject {
                id: format!("o{}", objects.len() + 1),
                expr,
                decoration,
            };
            objects.push(obj.clone());
            obj
        };
        self.session
            .lock()
            .expect("session lock")
            .push(SessionEntry::Object(obj.clone()));
        Ok(obj)
    }

    pub fn object(&self, id: &str) -> Option<StoredObject> {
        self.objects
            .read()
            .expect("object lock")
            .iter()
            .find(|o| o.id == id)
            .cloned()
    }

    pub fn session(&self) -> Vec<SessionEntry> {
        self.session.lock().expect("session lock").clone()
    }

    pub fn stats(&self) -> Stats {
        let kernels = self
            .kernels
            .read()
            .expect("kernel registry lock")
            .iter()
            .map(|r| KernelStats {
                name: r.descriptor.name.clone(),
                transport: r.descriptor.transport.clone(),
                invocations: r.invocations.load(Ordering::SeqCst),
            })
            .collect();
        let cache = self.cache.read().expect("cache lock");
        let mut entries: Vec<(String, u64)> = cache
            .iter()
            .map(|(k, e)| (k.clone(), e.hits.load(Ordering::SeqCst)))
            .collect();
        entries.sort();
        Stats {
            kernels,
            cache_size: cache.len(),
            hits: self.hits.load(Ordering::SeqCst),
            misses: self.misses.load(Ordering::SeqCst),
            entries,
        }
    }
}

fn route_index(kernels: &[Registered], q: &Question) -> Result<usize, BrokerError> {
    kernels
        .iter()
        .position(|r| (r.descriptor.accepts)(q.kind, &q.subject))
        .ok_or_else(|| BrokerError::Unroutable(q.describe()))
}

/// Sub-question context handed to a kernel during one dispatch.
struct Nested<'a> {
    broker: &'a Broker,
    stack: &'a mut Vec<String>,
    provenance: Vec<String>,
}

impl SubQuery for Nested<'_> {
    fn ask(&mut self, q: Question) -> Result<Answer, BrokerError> {
        let answer = self.broker.ask_within(&q, self.stack)?;
        self.provenance.extend(answer.provenance.iter().cloned());
        Ok(answer)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    fn broker() -> Broker {
        Broker::with_default_kernels(Arc::new(RuleBase::builtin()))
    }

    fn q(kind: QuestionKind, expr: &str, n: usize) -> Question {
        Question::new(kind, parse(expr).unwrap(), n)
    }

    #[test]
    fn routing_follows_registration_order() {
        let b = broker();
        assert_eq!(
            b.route(&q(QuestionKind::Homology, "K(C(5),1)", 5)).unwrap(),
            "grouphom"
        );
        assert_eq!(
            b.route(&q(QuestionKind::Homology, "C(5)", 5)).unwrap(),
            "grouphom"
        );
        assert_eq!(
            b.route(&q(QuestionKind::Homotopy, "S(4)", 4)).unwrap(),
            "hes"
        );
        assert_eq!(
            b.route(&q(QuestionKind::Homology, "S(2)", 2)).unwrap(),
            "simplicial"
        );
        assert_eq!(
            b.route(&Question::certify(&MultiplicationTable::cyclic(2)))
                .unwrap(),
            "certifier"
        );
        assert!(matches!(
            Broker::new().route(&q(QuestionKind::Homology, "S(2)", 2)),
            Err(BrokerError::Unroutable(_))
        ));
    }

    #[test]
    fn duplicate_registration_fails() {
        let b = broker();
        let again = default_kernel("simplicial", &Arc::new(RuleBase::builtin())).unwrap();
        assert_eq!(
            b.register_kernel(again),
            Err(BrokerError::DuplicateKernel("simplicial".into()))
        );
        let names: Vec<_> = b.stats().kernels.into_iter().map(|k| k.name).collect();
        assert_eq!(names, DEFAULT_KERNELS);
    }

    #[test]
    fn memoization() {
        let b = broker();
        let question = q(QuestionKind::Homology, "C(5)", 5);
        let first = b.ask(&question).unwrap();
        assert_eq!(first.value, Value::Group(FgAbelianGroup::cyclic(5)));
        assert!(!first.cached);
        let before = b.stats();
        let second = b.ask(&question).unwrap();
        assert!(second.cached);
        assert_eq!(second.value, first.value);
        assert_eq!(second.provenance, first.provenance);
        let after = b.stats();
        assert_eq!(before.kernels, after.kernels);
        assert_eq!((after.misses, after.hits), (1, 1));
        assert_eq!(after.entries[0].1, 1);
    }

    #[test]
    fn fresh_broker_counters_are_zero() {
        let s = broker().stats();
        assert_eq!((s.cache_size, s.hits, s.misses), (0, 0, 0));
        assert!(s.kernels.iter().all(|k| k.invocations == 0));
    }

    #[test]
    fn cooperation_records_provenance() {
        let b = broker();
        let a = b.ask(&q(QuestionKind::Homotopy, "S(4)", 4)).unwrap();
        assert_eq!(a.value, Value::Group(FgAbelianGroup::integers()));
        assert_eq!(a.provenance, ["hes", "simplicial"]);
        let stats = b.stats();
        let count = |n: &str| {
            stats
                .kernels
                .iter()
                .find(|k| k.name == n)
                .unwrap()
                .invocations
        };
        assert!(count("hes") > 0 && count("simplicial") > 0);
        let stored = b.trace(a.trace_id.as_deref().unwrap()).unwrap();
        assert_eq!(stored.derivation.trace.subqueries().count(), 1);

        let em = b.ask(&q(QuestionKind::Homology, "K(C(5),1)", 5)).unwrap();
        assert_eq!(em.value, Value::Group(FgAbelianGroup::cyclic(5)));
        assert_eq!(em.provenance, ["grouphom"]);

        let contractible = b.ask(&q(QuestionKind::Homotopy, "D(4)*D(5)", 4)).unwrap();
        assert_eq!(contractible.provenance, ["hes"]);
        assert_eq!(
            b.ask(&q(QuestionKind::Homotopy, "S(4)", 5)).unwrap().value,
            Value::Unknown
        );
    }

    struct Recursive;

    impl Kernel for Recursive {
        fn answer(
            &self,
            q: &Question,
            sub: &mut dyn SubQuery,
        ) -> Result<KernelAnswer, KernelError> {
            Ok(KernelAnswer::value(sub.ask(q.clone())?.value))
        }
    }

    struct Deeper;

    impl Kernel for Deeper {
        fn answer(
            &self,
            q: &Question,
            sub: &mut dyn SubQuery,
        ) -> Result<KernelAnswer, KernelError> {
            let next = Question::homology(q.subject.clone(), q.degree + 1);
            Ok(KernelAnswer::value(sub.ask(next)?.value))
        }
    }

    #[test]
    fn cycles_are_detected_and_the_broker_survives() {
        let b = Broker::new();
        b.register_kernel(KernelDescriptor::new(
            "loop",
            Arc::new(|_, s: &Term| s.is("algtop1", "sphere")),
            Arc::new(Recursive),
        ))
        .unwrap();
        b.register_kernel(KernelDescriptor::new(
            "deeper",
            Arc::new(|_, s: &Term| s.is("algtop1", "simplex")),
            Arc::new(Deeper),
        ))
        .unwrap();
        b.register_kernel(default_kernel("certifier", &Arc::new(RuleBase::builtin())).unwrap())
            .unwrap();
        let err = b.ask(&q(QuestionKind::Homology, "S(2)", 1)).unwrap_err();
        assert!(matches!(err, BrokerError::Cycle { depth: 2, .. }), "{err}");
        let err = b.ask(&q(QuestionKind::Homology, "D(2)", 0)).unwrap_err();
        assert!(
            matches!(err, BrokerError::Cycle { depth, .. } if depth == MAX_DEPTH + 1),
            "{err}"
        );
        // still responsive
        let ok = b
            .ask(&Question::certify(&MultiplicationTable::cyclic(3)))
            .unwrap();
        assert!(matches!(ok.value, Value::Certificate(ref r) if r.is_certified()));
    }

    #[test]
    fn decorations() {
        let d = |s: &str| decorate(&parse(s).unwrap()).unwrap();
        assert_eq!(
            (d("D(4)").contractible, d("D(4)").connectivity),
            (Tri::Yes, Connectivity::Infinite)
        );
        assert_eq!(d("S(4)").connectivity, Connectivity::Finite(3));
        assert_eq!(d("D(4)*D(5)").contractible, Tri::Yes);
        assert_eq!(d("D(4)*D(5)").dim_bound, Some(9));
        assert_eq!(d("S(2)*S(3)").connectivity, Connectivity::Finite(1));
        assert_eq!(d("K(C(5),3)").connectivity, Connectivity::Finite(2));
        assert_eq!(d("K(C(5),3)").dim_bound, None);
        assert_eq!(d("C(5)*C(2)").object_kind, ObjectKind::Group);
        assert!(decorate(&Term::int(3)).is_err());
    }

    #[test]
    fn objects_and_session_log() {
        let b = broker();
        let o = b.new_object(parse("S(4)").unwrap()).unwrap();
        assert_eq!(o.id, "o1");
        assert_eq!(b.object("o1").unwrap().expr, parse("S(4)").unwrap());
        b.ask(&q(QuestionKind::Homotopy, "S(4)", 4)).unwrap();
        let log = b.session();
        assert_eq!(log.len(), 2, "sub-questions are not logged");
        assert!(
            matches!(&log[1], SessionEntry::Question { question, .. } if question.kind == QuestionKind::Homotopy)
        );
    }

    #[test]
    fn question_terms_round_trip() {
        for question in [
            q(QuestionKind::Homology, "S(2)*RP2", 2),
            q(QuestionKind::Homology, "C(2)*C(3)", 4),
            q(QuestionKind::Homotopy, "K(C(5),1)", 1),
            Question::certify(&MultiplicationTable::cyclic(4)),
        ] {
            assert_eq!(Question::from_term(&question.to_term()).unwrap(), question);
        }
        assert!(Question::from_term(&Term::sym("algtop1", "rp2")).is_err());
        assert!(q(QuestionKind::Homotopy, "C(5)", 1).validate().is_err());
    }

    #[test]
    fn value_terms_round_trip() {
        for v in [
            Value::Group(FgAbelianGroup::new(2, [2u32, 4, 3].map(Into::into))),
            Value::Unknown,
            Value::Certificate(crate::certifier::check(&MultiplicationTable::cyclic(3))),
        ] {
            assert_eq!(Value::from_term(&v.to_term()).unwrap(), v);
        }
        assert!(Value::from_term(&Term::apply(
            "res1",
            "fg_abelian",
            vec![Term::int(0), Term::str("4 2")]
        ))
        .is_err());
    }
}
