//! The homotopy expert system: a forward-chaining rule engine over facts about
//! a space and its sub-expressions, with explanation traces that can be
//! replayed mechanically.
//!
//! Rules come from a small XML dialect (see `data/rules.xml` for the shipped
//! base). Each step fires the activation of the earliest rule in file order,
//! breaking ties by the most recently derived facts; activations whose
//! consequent is already known are skipped, so the loop reaches a fixpoint.
//! Degrees are bounded by the question degree plus one and subjects by the
//! sub-expressions of the question, which keeps the fact space finite.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;
use thiserror::Error;

use crate::expr::render;
use crate::grouphom::GroupExpr;
use crate::simplicial::SpaceExpr;
use crate::snf::FgAbelianGroup;
use crate::term::Term;

/// The shipped knowledge base.
pub const DEFAULT_RULES: &str = include_str!("../data/rules.xml");

/// Firing budget per inference; generous next to the bounded fact space.
pub const DEFAULT_FUEL: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Value {
    /// A space or group expression.
    Term(Arc<Term>),
    Int(i64),
    /// Unbounded connectivity.
    Inf,
    Group(FgAbelianGroup),
}

impl Value {
    pub fn term(t: Term) -> Value {
        Value::Term(Arc::new(t))
    }

    pub fn as_term(&self) -> Option<&Term> {
        match self {
            Value::Term(t) => Some(t),
            _ => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Term(t) => f.write_str(&render(t)),
            Value::Int(v) => write!(f, "{v}"),
            Value::Inf => f.write_str("inf"),
            Value::Group(g) => write!(f, "{g}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Fact {
    pub pred: String,
    pub args: Vec<Value>,
}

impl Fact {
    pub fn new(pred: &str, args: Vec<Value>) -> Fact {
        Fact {
            pred: pred.to_string(),
            args,
        }
    }

    /// The property instance: functional predicates hold one value per key.
    fn key(&self) -> FactKey {
        let functional = spec(&self.pred).is_some_and(|s| s.functional);
        let n = if functional {
            self.args.len().saturating_sub(1)
        } else {
            self.args.len()
        };
        (self.pred.clone(), self.args[..n].to_vec())
    }

    fn subject(&self) -> Option<&Term> {
        self.args.first().and_then(Value::as_term)
    }
}

impl fmt::Display for Fact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.pred)?;
        for (i, a) in self.args.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{a}")?;
        }
        f.write_str(")")
    }
}

type FactKey = (String, Vec<Value>);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Space,
    GroupTerm,
    Int,
    /// A homotopy or homology degree, bounded during inference.
    Degree,
    /// Connectivity: an integer >= -1 or `inf`.
    Level,
    Group,
}

struct PredSpec {
    name: &'static str,
    slots: &'static [Slot],
    functional: bool,
}

const PREDICATES: &[PredSpec] = &[
    PredSpec {
        name: "contractible",
        slots: &[Slot::Space],
        functional: false,
    },
    PredSpec {
        name: "connectivity",
        slots: &[Slot::Space, Slot::Level],
        functional: true,
    },
    PredSpec {
        name: "homotopy",
        slots: &[Slot::Space, Slot::Degree, Slot::Group],
        functional: true,
    },
    PredSpec {
        name: "homology",
        slots: &[Slot::Space, Slot::Degree, Slot::Group],
        functional: true,
    },
    PredSpec {
        name: "is_em_space",
        slots: &[Slot::Space, Slot::GroupTerm, Slot::Int],
        functional: false,
    },
    PredSpec {
        name: "is_sphere",
        slots: &[Slot::Space, Slot::Int],
        functional: false,
    },
    PredSpec {
        name: "is_simplex",
        slots: &[Slot::Space, Slot::Int],
        functional: false,
    },
    PredSpec {
        name: "is_product",
        slots: &[Slot::Space, Slot::Space, Slot::Space],
        functional: false,
    },
];

fn spec(name: &str) -> Option<&'static PredSpec> {
    PREDICATES.iter().find(|p| p.name == name)
}

fn fits(slot: Slot, v: &Value) -> bool {
    match (slot, v) {
        (Slot::Space | Slot::GroupTerm, Value::Term(_)) => true,
        (Slot::Int, Value::Int(_)) => true,
        (Slot::Degree, Value::Int(n)) => *n >= 0,
        (Slot::Level, Value::Int(n)) => *n >= -1,
        (Slot::Level, Value::Inf) => true,
        (Slot::Group, Value::Group(_)) => true,
        _ => false,
    }
}

// ---------------------------------------------------------------------------
// Rules

#[derive(Debug, Clone, PartialEq)]
enum Expr {
    Var(usize),
    Int(i64),
    Inf,
    Zero,
    Integers,
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Min(Box<Expr>, Box<Expr>),
    Sum(Box<Expr>, Box<Expr>),
    Group(Box<Expr>),
    Homology(Box<Expr>, Box<Expr>),
}

impl Expr {
    fn uses_homology(&self) -> bool {
        match self {
            Expr::Homology(..) => true,
            Expr::Var(_) | Expr::Int(_) | Expr::Inf | Expr::Zero | Expr::Integers => false,
            Expr::Group(a) => a.uses_homology(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Min(a, b) | Expr::Sum(a, b) => {
                a.uses_homology() || b.uses_homology()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CmpOp {
    Ge,
    Le,
    Gt,
    Lt,
    Eq,
    Ne,
}

#[derive(Debug, Clone, PartialEq)]
struct Pattern {
    pred: String,
    args: Vec<Expr>,
}

#[derive(Debug, Clone, PartialEq)]
struct Guard {
    lhs: Expr,
    op: CmpOp,
    rhs: Expr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    id: String,
    cite: String,
    subquery: bool,
    antecedents: Vec<Pattern>,
    guards: Vec<Guard>,
    consequent: Pattern,
    /// Variable names; the first `bound` are bound by antecedents, the rest
    /// are free degree variables introduced by guards.
    vars: Vec<String>,
    bound: usize,
}

impl Rule {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn citation(&self) -> &str {
        &self.cite
    }

    pub fn may_subquery(&self) -> bool {
        self.subquery
    }

    fn consequent_spec(&self) -> &'static PredSpec {
        spec(&self.consequent.pred).expect("consequent predicate checked at load")
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("line {line}: {message}")]
pub struct RuleError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleBase {
    rules: Vec<Rule>,
}

impl RuleBase {
    /// Parses and checks a rule file. Rule order is file order.
    pub fn load(source: &str) -> Result<RuleBase, RuleError> {
        let raw = XmlRules::new(source).rulebase()?;
        let mut seen = HashSet::new();
        let mut rules = Vec::with_capacity(raw.len());
        for r in raw {
            if !seen.insert(r.id.clone()) {
                return Err(RuleError {
                    line: r.line,
                    message: format!("duplicate rule id {:?}", r.id),
                });
            }
            rules.push(compile(r)?);
        }
        Ok(RuleBase { rules })
    }

    pub fn builtin() -> RuleBase {
        RuleBase::load(DEFAULT_RULES).expect("shipped rule base is valid")
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn rule(&self, id: &str) -> Option<&Rule> {
        self.rules.iter().find(|r| r.id == id)
    }
}

struct RawRule {
    line: usize,
    id: String,
    subquery: bool,
    cite: Option<String>,
    ante: Vec<(usize, String)>,
    guard: Vec<(usize, String)>,
    cons: Vec<(usize, String)>,
}

struct XmlRules<'a> {
    src: &'a str,
    reader: Reader<&'a [u8]>,
}

impl<'a> XmlRules<'a> {
    fn new(src: &'a str) -> Self {
        XmlRules {
            src,
            reader: Reader::from_str(src),
        }
    }

    fn line(&self) -> usize {
        let pos = usize::try_from(self.reader.buffer_position())
            .unwrap_or(usize::MAX)
            .min(self.src.len());
        self.src.as_bytes()[..pos]
            .iter()
            .filter(|&&b| b == b'\n')
            .count()
            + 1
    }

    fn error(&self, message: impl Into<String>) -> RuleError {
        RuleError {
            line: self.line(),
            message: message.into(),
        }
    }

    fn next(&mut self) -> Result<Event<'a>, RuleError> {
        loop {
            match self.reader.read_event() {
                Ok(Event::Comment(_) | Event::Decl(_) | Event::PI(_) | Event::DocType(_)) => {}
                Ok(Event::Text(t)) if t.iter().all(u8::is_ascii_whitespace) => {}
                Ok(e) => return Ok(e),
                Err(e) => return Err(self.error(e.to_string())),
            }
        }
    }

    fn rulebase(mut self) -> Result<Vec<RawRule>, RuleError> {
        match self.next()? {
            Event::Start(e) if e.name().as_ref() == b"rulebase" => {}
            _ => return Err(self.error("expected <rulebase>")),
        }
        let mut rules = Vec::new();
        loop {
            match self.next()? {
                Event::Start(e) if e.name().as_ref() == b"rule" => rules.push(self.rule(&e)?),
                Event::End(e) if e.name().as_ref() == b"rulebase" => break,
                Event::Eof => return Err(self.error("unterminated <rulebase>")),
                other => {
                    return Err(self.error(format!("unexpected {} in <rulebase>", describe(&other))))
                }
            }
        }
        match self.next()? {
            Event::Eof => Ok(rules),
            other => Err(self.error(format!("trailing {} after </rulebase>", describe(&other)))),
        }
    }

    fn rule(&mut self, start: &BytesStart<'_>) -> Result<RawRule, RuleError> {
        let line = self.line();
        let mut id = None;
        let mut subquery = false;
        for attr in start.attributes() {
            let attr = attr.map_err(|e| self.error(e.to_string()))?;
            let value = attr
                .unescape_value()
                .map_err(|e| self.error(e.to_string()))?
                .into_owned();
            match attr.key.as_ref() {
                b"id" => id = Some(value),
                b"subquery" => {
                    subquery = match value.as_str() {
                        "true" => true,
                        "false" => false,
                        _ => {
                            return Err(self
                                .error(format!("subquery must be true or false, got {value:?}")))
                        }
                    }
                }
                other => {
                    return Err(self.error(format!(
                        "unknown rule attribute {:?}",
                        String::from_utf8_lossy(other)
                    )))
                }
            }
        }
        let id = id
            .filter(|s| !s.trim().is_empty())
            .ok_or_else(|| self.error("rule without id"))?;
        let mut raw = RawRule {
            line,
            id,
            subquery,
            cite: None,
            ante: Vec::new(),
            guard: Vec::new(),
            cons: Vec::new(),
        };
        loop {
            let (name, text) = match self.next()? {
                Event::Start(e) => {
                    let name = e.name().as_ref().to_vec();
                    let line = self.line();
                    (name.clone(), (line, self.text_until(&name)?))
                }
                Event::Empty(e) => (e.name().as_ref().to_vec(), (self.line(), String::new())),
                Event::End(e) if e.name().as_ref() == b"rule" => break,
                other => {
                    return Err(self.error(format!("unexpected {} in <rule>", describe(&other))))
                }
            };
            match name.as_slice() {
                b"cite" if raw.cite.is_none() => raw.cite = Some(text.1.trim().to_string()),
                b"cite" => return Err(self.error("more than one <cite>")),
                b"ante" => raw.ante.push(text),
                b"guard" => raw.guard.push(text),
                b"cons" => raw.cons.push(text),
                other => {
                    return Err(self.error(format!(
                        "unknown element <{}> in rule",
                        String::from_utf8_lossy(other)
                    )))
                }
            }
        }
        Ok(raw)
    }

    fn text_until(&mut self, name: &[u8]) -> Result<String, RuleError> {
        let mut text = String::new();
        loop {
            match self.reader.read_event() {
                Ok(Event::Text(t)) => {
                    text.push_str(&t.unescape().map_err(|e| self.error(e.to_string()))?)
                }
                Ok(Event::CData(c)) => text.push_str(&String::from_utf8_lossy(&c)),
                Ok(Event::Comment(_)) => {}
                Ok(Event::End(e)) if e.name().as_ref() == name => return Ok(text),
                Ok(other) => {
                    return Err(self.error(format!("unexpected {} in text", describe(&other))))
                }
                Err(e) => return Err(self.error(e.to_string())),
            }
        }
    }
}

fn describe(e: &Event<'_>) -> String {
    match e {
        Event::Start(s) | Event::Empty(s) => {
            format!("<{}>", String::from_utf8_lossy(s.name().as_ref()))
        }
        Event::End(s) => format!("</{}>", String::from_utf8_lossy(s.name().as_ref())),
        Event::Eof => "end of file".into(),
        Event::Text(_) | Event::CData(_) => "text".into(),
        _ => "markup".into(),
    }
}

fn compile(raw: RawRule) -> Result<Rule, RuleError> {
    let err = |line: usize, message: String| RuleError {
        line,
        message: format!("rule {}: {message}", raw.id),
    };
    let cite = raw
        .cite
        .filter(|c| !c.is_empty())
        .ok_or_else(|| err(raw.line, "missing <cite>".into()))?;
    let [(cons_line, cons_text)] = raw.cons.as_slice() else {
        return Err(err(raw.line, "exactly one <cons> required".into()));
    };

    let mut vars: Vec<String> = Vec::new();
    let mut antecedents = Vec::new();
    for (line, text) in &raw.ante {
        let pattern = Syntax::new(text)
            .pattern(&mut |name| Ok(intern(&mut vars, name)))
            .map_err(|m| err(*line, m))?;
        check_predicate(&pattern).map_err(|m| err(*line, m))?;
        if let Some(bad) = pattern
            .args
            .iter()
            .find(|a| !matches!(a, Expr::Var(_) | Expr::Int(_) | Expr::Inf))
        {
            return Err(err(
                *line,
                format!("antecedent arguments must be variables or constants, got {bad:?}"),
            ));
        }
        antecedents.push(pattern);
    }
    let bound = vars.len();
    let mut guards = Vec::new();
    for (line, text) in &raw.guard {
        let guard = Syntax::new(text)
            .guard(&mut |name| Ok(intern(&mut vars, name)))
            .map_err(|m| err(*line, m))?;
        if guard.lhs.uses_homology() || guard.rhs.uses_homology() {
            return Err(err(
                *line,
                "homology() may only appear in a consequent value".into(),
            ));
        }
        guards.push(guard);
    }
    let consequent = Syntax::new(cons_text)
        .pattern(&mut |name| {
            vars.iter()
                .position(|v| v == name)
                .ok_or_else(|| format!("variable {name} in the consequent is not bound"))
        })
        .map_err(|m| err(*cons_line, m))?;
    let pred = check_predicate(&consequent).map_err(|m| err(*cons_line, m))?;
    for (i, a) in consequent.args.iter().enumerate() {
        let value_slot = pred.functional && i + 1 == consequent.args.len();
        if a.uses_homology() && !value_slot {
            return Err(err(
                *cons_line,
                "homology() may only appear in a consequent value".into(),
            ));
        }
    }
    Ok(Rule {
        id: raw.id,
        cite,
        subquery: raw.subquery,
        antecedents,
        guards,
        consequent,
        vars,
        bound,
    })
}

fn intern(vars: &mut Vec<String>, name: &str) -> usize {
    match vars.iter().position(|v| v == name) {
        Some(i) => i,
        None => {
            vars.push(name.to_string());
            vars.len() - 1
        }
    }
}

fn check_predicate(p: &Pattern) -> Result<&'static PredSpec, String> {
    let s = spec(&p.pred).ok_or_else(|| format!("unknown predicate {}", p.pred))?;
    if s.slots.len() != p.args.len() {
        return Err(format!(
            "{} takes {} arguments, got {}",
            p.pred,
            s.slots.len(),
            p.args.len()
        ));
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    LParen,
    RParen,
    Comma,
    Plus,
    Minus,
    Cmp(CmpOp),
}

/// Recursive-descent parser for patterns, value expressions and guards.
struct Syntax {
    toks: Vec<Tok>,
    pos: usize,
    error: Option<String>,
}

type Resolve<'r> = dyn FnMut(&str) -> Result<usize, String> + 'r;

impl Syntax {
    fn new(text: &str) -> Syntax {
        let mut toks = Vec::new();
        let mut error = None;
        let mut chars = text.char_indices().peekable();
        while let Some(&(i, c)) = chars.peek() {
            let two = text.get(i..i + 2).unwrap_or("");
            let (tok, len) = match c {
                c if c.is_whitespace() => {
                    chars.next();
                    continue;
                }
                '(' => (Tok::LParen, 1),
                ')' => (Tok::RParen, 1),
                ',' => (Tok::Comma, 1),
                '+' => (Tok::Plus, 1),
                '-' => (Tok::Minus, 1),
                _ if two == ">=" => (Tok::Cmp(CmpOp::Ge), 2),
                _ if two == "<=" => (Tok::Cmp(CmpOp::Le), 2),
                _ if two == "!=" => (Tok::Cmp(CmpOp::Ne), 2),
                _ if two == "==" => (Tok::Cmp(CmpOp::Eq), 2),
                '>' => (Tok::Cmp(CmpOp::Gt), 1),
                '<' => (Tok::Cmp(CmpOp::Lt), 1),
                '=' => (Tok::Cmp(CmpOp::Eq), 1),
                c if c.is_ascii_digit() => {
                    let end = text[i..]
                        .find(|ch: char| !ch.is_ascii_digit())
                        .map_or(text.len(), |n| i + n);
                    match text[i..end].parse() {
                        Ok(v) => (Tok::Int(v), end - i),
                        Err(_) => {
                            error = Some(format!("integer {} out of range", &text[i..end]));
                            break;
                        }
                    }
                }
                c if c.is_ascii_alphabetic() || c == '_' => {
                    let end = text[i..]
                        .find(|ch: char| !(ch.is_ascii_alphanumeric() || ch == '_'))
                        .map_or(text.len(), |n| i + n);
                    (Tok::Ident(text[i..end].to_string()), end - i)
                }
                other => {
                    error = Some(format!("unexpected character {other:?}"));
                    break;
                }
            };
            toks.push(tok);
            for _ in 0..len {
                chars.next();
            }
        }
        Syntax {
            toks,
            pos: 0,
            error,
        }
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn expect(&mut self, t: Tok, what: &str) -> Result<(), String> {
        match self.bump() {
            Some(got) if got == t => Ok(()),
            Some(got) => Err(format!("expected {what}, found {got:?}")),
            None => Err(format!("expected {what}, found end of text")),
        }
    }

    fn finish<T>(&mut self, value: T) -> Result<T, String> {
        match self.peek() {
            None => Ok(value),
            Some(t) => Err(format!("unexpected trailing {t:?}")),
        }
    }

    fn pattern(mut self, resolve: &mut Resolve<'_>) -> Result<Pattern, String> {
        if let Some(e) = self.error.take() {
            return Err(e);
        }
        let pred = match self.bump() {
            Some(Tok::Ident(name)) => name,
            _ => return Err("expected a predicate name".into()),
        };
        let args = self.arguments(resolve)?;
        self.finish(Pattern { pred, args })
    }

    fn guard(mut self, resolve: &mut Resolve<'_>) -> Result<Guard, String> {
        if let Some(e) = self.error.take() {
            return Err(e);
        }
        let lhs = self.expr(resolve)?;
        let op = match self.bump() {
            Some(Tok::Cmp(op)) => op,
            _ => return Err("expected a comparison".into()),
        };
        let rhs = self.expr(resolve)?;
        self.finish(Guard { lhs, op, rhs })
    }

    fn arguments(&mut self, resolve: &mut Resolve<'_>) -> Result<Vec<Expr>, String> {
        self.expect(Tok::LParen, "'('")?;
        let mut args = Vec::new();
        if self.peek() == Some(&Tok::RParen) {
            self.bump();
            return Ok(args);
        }
        loop {
            args.push(self.expr(resolve)?);
            match self.bump() {
                Some(Tok::Comma) => {}
                Some(Tok::RParen) => return Ok(args),
                _ => return Err("expected ',' or ')'".into()),
            }
        }
    }

    fn expr(&mut self, resolve: &mut Resolve<'_>) -> Result<Expr, String> {
        let mut acc = self.primary(resolve)?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.bump();
                    acc = Expr::Add(Box::new(acc), Box::new(self.primary(resolve)?));
                }
                Some(Tok::Minus) => {
                    self.bump();
                    acc = Expr::Sub(Box::new(acc), Box::new(self.primary(resolve)?));
                }
                _ => return Ok(acc),
            }
        }
    }

    fn primary(&mut self, resolve: &mut Resolve<'_>) -> Result<Expr, String> {
        match self.bump() {
            Some(Tok::Int(v)) => Ok(Expr::Int(v)),
            Some(Tok::Ident(name)) if self.peek() == Some(&Tok::LParen) => {
                let args = self.arguments(resolve)?;
                let arity = |n: usize| {
                    if args.len() == n {
                        Ok(())
                    } else {
                        Err(format!("{name} takes {n} arguments"))
                    }
                };
                let mut it = args.clone().into_iter().map(Box::new);
                let mut next = || it.next().expect("arity checked");
                match name.as_str() {
                    "min" => arity(2).map(|_| Expr::Min(next(), next())),
                    "sum" => arity(2).map(|_| Expr::Sum(next(), next())),
                    "group" => arity(1).map(|_| Expr::Group(next())),
                    "homology" => arity(2).map(|_| Expr::Homology(next(), next())),
                    _ => Err(format!("unknown function {name}")),
                }
            }
            Some(Tok::Ident(name)) => Ok(match name.as_str() {
                "zero" => Expr::Zero,
                "Z" => Expr::Integers,
                "inf" => Expr::Inf,
                _ => Expr::Var(resolve(&name)?),
            }),
            Some(t) => Err(format!("unexpected {t:?}")),
            None => Err("unexpected end of text".into()),
        }
    }
}

// ---------------------------------------------------------------------------
// Evaluation

enum EvalError {
    /// A homology value is neither known nor obtainable.
    Unavailable,
    Type(String),
    Oracle(OracleError),
}

type HomologyLookup<'a> = dyn FnMut(&Value, &Value) -> Result<Value, EvalError> + 'a;

fn eval(e: &Expr, values: &[Value], homology: &mut HomologyLookup<'_>) -> Result<Value, EvalError> {
    let level = |v: Value| match v {
        Value::Int(_) | Value::Inf => Ok(v),
        other => Err(EvalError::Type(format!(
            "expected an integer or inf, got {other}"
        ))),
    };
    Ok(match e {
        Expr::Var(i) => values[*i].clone(),
        Expr::Int(v) => Value::Int(*v),
        Expr::Inf => Value::Inf,
        Expr::Zero => Value::Group(FgAbelianGroup::zero()),
        Expr::Integers => Value::Group(FgAbelianGroup::integers()),
        Expr::Add(a, b) | Expr::Sub(a, b) => {
            let (x, y) = (eval(a, values, homology)?, eval(b, values, homology)?);
            let sign = if matches!(e, Expr::Add(..)) { 1 } else { -1 };
            match (level(x)?, level(y)?) {
                (Value::Int(x), Value::Int(y)) => Value::Int(
                    y.checked_mul(sign)
                        .and_then(|y| x.checked_add(y))
                        .ok_or_else(|| EvalError::Type("integer overflow".into()))?,
                ),
                (Value::Inf, Value::Int(_)) => Value::Inf,
                _ => return Err(EvalError::Type("arithmetic on inf".into())),
            }
        }
        Expr::Min(a, b) => {
            let (x, y) = (
                level(eval(a, values, homology)?)?,
                level(eval(b, values, homology)?)?,
            );
            if compare_levels(&x, &y) == std::cmp::Ordering::Greater {
                y
            } else {
                x
            }
        }
        Expr::Sum(a, b) => match (eval(a, values, homology)?, eval(b, values, homology)?) {
            (Value::Group(x), Value::Group(y)) => Value::Group(x.direct_sum(&y)),
            _ => return Err(EvalError::Type("sum() needs two groups".into())),
        },
        Expr::Group(g) => match eval(g, values, homology)? {
            Value::Term(t) => Value::Group(
                GroupExpr::from_term(&t)
                    .map_err(|e| EvalError::Type(e.to_string()))?
                    .as_abelian(),
            ),
            other => {
                return Err(EvalError::Type(format!(
                    "group() needs a group expression, got {other}"
                )))
            }
        },
        Expr::Homology(x, n) => {
            let (x, n) = (eval(x, values, homology)?, eval(n, values, homology)?);
            homology(&x, &n)?
        }
    })
}

fn compare_levels(a: &Value, b: &Value) -> std::cmp::Ordering {
    use std::cmp::Ordering;
    match (a, b) {
        (Value::Int(x), Value::Int(y)) => x.cmp(y),
        (Value::Inf, Value::Inf) => Ordering::Equal,
        (Value::Inf, _) => Ordering::Greater,
        (_, Value::Inf) => Ordering::Less,
        _ => Ordering::Equal,
    }
}

fn guard_holds(g: &Guard, values: &[Value]) -> Result<bool, EvalError> {
    let mut no_homology = |_: &Value, _: &Value| Err(EvalError::Type("homology() in guard".into()));
    let l = eval(&g.lhs, values, &mut no_homology)?;
    let r = eval(&g.rhs, values, &mut no_homology)?;
    let ordered = matches!(g.op, CmpOp::Ge | CmpOp::Le | CmpOp::Gt | CmpOp::Lt);
    if ordered
        && !(matches!(l, Value::Int(_) | Value::Inf) && matches!(r, Value::Int(_) | Value::Inf))
    {
        return Err(EvalError::Type(format!("cannot order {l} and {r}")));
    }
    let ord = compare_levels(&l, &r);
    Ok(match g.op {
        CmpOp::Ge => ord.is_ge(),
        CmpOp::Le => ord.is_le(),
        CmpOp::Gt => ord.is_gt(),
        CmpOp::Lt => ord.is_lt(),
        CmpOp::Eq => l == r,
        CmpOp::Ne => l != r,
    })
}

fn instantiate(p: &Pattern, values: &[Value]) -> Fact {
    let mut none = |_: &Value, _: &Value| Err(EvalError::Unavailable);
    let args = p
        .args
        .iter()
        .map(|a| eval(a, values, &mut none).unwrap_or(Value::Inf))
        .collect();
    Fact {
        pred: p.pred.clone(),
        args,
    }
}

// ---------------------------------------------------------------------------
// Traces

/// A homology question the engine put to the oracle, with its answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubQuestion {
    pub subject: Term,
    pub degree: usize,
    pub answer: FgAbelianGroup,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceStep {
    pub rule: String,
    pub cite: String,
    pub bindings: Vec<(String, Value)>,
    /// Matched antecedent facts in rule order, then any homology facts read
    /// while evaluating the consequent.
    pub consumed: Vec<Fact>,
    pub produced: Fact,
    pub subqueries: Vec<SubQuestion>,
}

impl fmt::Display for TraceStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {} [", self.rule, self.cite)?;
        for (i, (name, v)) in self.bindings.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{name}={v}")?;
        }
        write!(f, "] => {}", self.produced)?;
        for q in &self.subqueries {
            write!(
                f,
                "; asked H_{}({}) = {}",
                q.degree,
                render(&q.subject),
                q.answer
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    pub steps: Vec<TraceStep>,
}

impl Trace {
    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn subqueries(&self) -> impl Iterator<Item = &SubQuestion> {
        self.steps.iter().flat_map(|s| s.subqueries.iter())
    }
}

/// One line per step; `"no applicable rules"` for an empty trace.
pub fn explain(trace: &Trace) -> String {
    if trace.is_empty() {
        return "no applicable rules".to_string();
    }
    trace
        .steps
        .iter()
        .map(TraceStep::to_string)
        .collect::<Vec<_>>()
        .join("\n")
}

// ---------------------------------------------------------------------------
// Inference

pub type OracleError = Box<dyn std::error::Error + Send + Sync>;

/// Source of homology groups for rules flagged `subquery="true"`.
/// `Ok(None)` means the oracle cannot answer.
pub trait HomologyOracle {
    fn homology(
        &mut self,
        subject: &Term,
        degree: usize,
    ) -> Result<Option<FgAbelianGroup>, OracleError>;
}

impl<F> HomologyOracle for F
where
    F: FnMut(&Term, usize) -> Result<Option<FgAbelianGroup>, OracleError>,
{
    fn homology(
        &mut self,
        subject: &Term,
        degree: usize,
    ) -> Result<Option<FgAbelianGroup>, OracleError> {
        self(subject, degree)
    }
}

/// An oracle that never answers.
pub struct NoOracle;

impl HomologyOracle for NoOracle {
    fn homology(&mut self, _: &Term, _: usize) -> Result<Option<FgAbelianGroup>, OracleError> {
        Ok(None)
    }
}

#[derive(Debug, Error)]
pub enum HesError {
    #[error("not a space expression: {0}")]
    InvalidSubject(String),
    #[error("rule {rule}: {message}")]
    Rule { rule: String, message: String },
    #[error("inference exhausted its fuel after {0} steps")]
    FuelExhausted(usize),
    #[error("homology sub-question failed: {source}")]
    Oracle { source: OracleError, partial: Trace },
}

#[derive(Debug, Clone)]
pub struct Inference {
    /// `None` when no rule derives the goal.
    pub value: Option<FgAbelianGroup>,
    /// Steps leading to the goal, in firing order; empty when unknown.
    pub trace: Trace,
    /// Working memory before the first step, for replay.
    pub initial_facts: Vec<Fact>,
    pub steps_fired: usize,
}

/// Structural facts about `subject` and each of its sub-expressions, in
/// pre-order.
pub fn initial_facts(subject: &Term) -> Result<Vec<Fact>, HesError> {
    SpaceExpr::from_term(subject).map_err(|_| HesError::InvalidSubject(render(subject)))?;
    let mut out = Vec::new();
    structural_facts(subject, &mut out);
    let mut seen = HashSet::new();
    out.retain(|f| seen.insert(f.clone()));
    Ok(out)
}

fn structural_facts(t: &Term, out: &mut Vec<Fact>) {
    let x = || Value::term(t.clone());
    let int = |a: &Term| Value::Int(a.as_i64().unwrap_or(-1));
    let args = t.args();
    if t.is("algtop1", "sphere") {
        out.push(Fact::new("is_sphere", vec![x(), int(&args[0])]));
    } else if t.is("algtop1", "simplex") {
        out.push(Fact::new("is_simplex", vec![x(), int(&args[0])]));
    } else if t.is("algtop1", "em_space") {
        out.push(Fact::new(
            "is_em_space",
            vec![x(), Value::term(args[0].clone()), int(&args[1])],
        ));
    } else if t.is("algtop1", "cartesian_product") {
        out.push(Fact::new(
            "is_product",
            vec![
                x(),
                Value::term(args[0].clone()),
                Value::term(args[1].clone()),
            ],
        ));
        structural_facts(&args[0], out);
        structural_facts(&args[1], out);
    }
}

fn sub_expressions(t: &Term, out: &mut HashSet<Term>) {
    out.insert(t.clone());
    if t.is("algtop1", "cartesian_product") {
        for a in t.args() {
            sub_expressions(a, out);
        }
    }
}

#[derive(Default)]
struct Memory {
    facts: Vec<Fact>,
    keys: HashMap<FactKey, usize>,
    by_pred: HashMap<String, Vec<usize>>,
    by_subject: HashMap<(String, Value), Vec<usize>>,
}

impl Memory {
    fn insert(&mut self, fact: Fact) -> Option<usize> {
        let key = fact.key();
        if self.keys.contains_key(&key) {
            return None;
        }
        let i = self.facts.len();
        self.keys.insert(key, i);
        self.by_pred.entry(fact.pred.clone()).or_default().push(i);
        if let Some(first) = fact.args.first() {
            self.by_subject
                .entry((fact.pred.clone(), first.clone()))
                .or_default()
                .push(i);
        }
        self.facts.push(fact);
        Some(i)
    }

    fn lookup(&self, key: &FactKey) -> Option<usize> {
        self.keys.get(key).copied()
    }

    fn contains(&self, f: &Fact) -> bool {
        self.lookup(&f.key()).is_some_and(|i| self.facts[i] == *f)
    }

    fn candidates_for(&self, pred: &str, first: Option<&Value>) -> &[usize] {
        let hit = match first {
            Some(v) => self.by_subject.get(&(pred.to_string(), v.clone())),
            None => self.by_pred.get(pred),
        };
        hit.map_or(&[], Vec::as_slice)
    }
}

/// Bounds on instantiation for one question.
struct Scope {
    subjects: HashSet<Term>,
    max_degree: i64,
}

#[derive(Debug, Clone)]
struct Candidate {
    values: Vec<Value>,
    consumed: Vec<usize>,
    key: FactKey,
}

impl RuleBase {
    pub fn infer(
        &self,
        subject: &Term,
        degree: usize,
        extra_facts: &[Fact],
        oracle: &mut dyn HomologyOracle,
    ) -> Result<Inference, HesError> {
        self.infer_with_fuel(subject, degree, extra_facts, oracle, DEFAULT_FUEL)
    }

    pub fn infer_with_fuel(
        &self,
        subject: &Term,
        degree: usize,
        extra_facts: &[Fact],
        oracle: &mut dyn HomologyOracle,
        fuel: usize,
    ) -> Result<Inference, HesError> {
        let mut subjects = HashSet::new();
        sub_expressions(subject, &mut subjects);
        let scope = Scope {
            subjects,
            max_degree: degree as i64 + 1,
        };
        let mut initial = initial_facts(subject)?;
        // Facts about anything outside the question's sub-expressions are
        // irrelevant to it and dropped.
        initial.extend(
            extra_facts
                .iter()
                .filter(|f| f.subject().is_some_and(|s| scope.subjects.contains(s)))
                .cloned(),
        );
        let mut mem = Memory::default();
        let mut producer: Vec<Option<usize>> = Vec::new();
        let mut kept_initial = Vec::new();
        for f in initial {
            if mem.insert(f.clone()).is_some() {
                producer.push(None);
                kept_initial.push(f);
            }
        }

        let goal_subject = Value::term(subject.clone());
        let goal_key: FactKey = (
            "homotopy".into(),
            vec![goal_subject.clone(), Value::Int(degree as i64)],
        );

        let mut steps: Vec<(TraceStep, Vec<usize>)> = Vec::new();
        let mut cache: Vec<Option<Vec<Candidate>>> = vec![None; self.rules.len()];
        let mut failed: HashSet<(usize, Vec<Value>)> = HashSet::new();
        loop {
            let Some((step, consumed)) = self
                .fire_next(
                    &mut mem,
                    &scope,
                    &mut cache,
                    &mut failed,
                    oracle,
                    (subject, degree),
                )
                .map_err(|e| match e {
                    HesError::Oracle { source, .. } => HesError::Oracle {
                        source,
                        partial: Trace {
                            steps: steps.iter().map(|(s, _)| s.clone()).collect(),
                        },
                    },
                    other => other,
                })?
            else {
                break;
            };
            producer.push(Some(steps.len()));
            let pred = step.produced.pred.clone();
            steps.push((step, consumed));
            if steps.len() > fuel {
                return Err(HesError::FuelExhausted(fuel));
            }
            for (i, rule) in self.rules.iter().enumerate() {
                let reads = rule.antecedents.iter().any(|p| p.pred == pred)
                    || (pred == "homology" && rule.consequent.args.iter().any(Expr::uses_homology));
                if reads {
                    cache[i] = None;
                }
            }
        }

        let steps_fired = steps.len();
        let Some(goal) = mem.lookup(&goal_key) else {
            return Ok(Inference {
                value: None,
                trace: Trace::default(),
                initial_facts: kept_initial,
                steps_fired,
            });
        };
        let value = match mem.facts[goal].args.last() {
            Some(Value::Group(g)) => g.clone(),
            _ => unreachable!("homotopy facts carry groups"),
        };

        // Keep only the ancestors of the goal, in firing order.
        let mut keep = vec![false; steps.len()];
        let mut stack = vec![goal];
        while let Some(fact) = stack.pop() {
            if let Some(s) = producer[fact] {
                if !keep[s] {
                    keep[s] = true;
                    stack.extend(steps[s].1.iter().copied());
                }
            }
        }
        let trace = Trace {
            steps: steps
                .into_iter()
                .zip(keep)
                .filter_map(|((s, _), k)| k.then_some(s))
                .collect(),
        };
        Ok(Inference {
            value: Some(value),
            trace,
            initial_facts: kept_initial,
            steps_fired,
        })
    }

    /// Fires the preferred activation, if any, returning the step and the
    /// memory indices it consumed.
    fn fire_next(
        &self,
        mem: &mut Memory,
        scope: &Scope,
        cache: &mut [Option<Vec<Candidate>>],
        failed: &mut HashSet<(usize, Vec<Value>)>,
        oracle: &mut dyn HomologyOracle,
        goal: (&Term, usize),
    ) -> Result<Option<(TraceStep, Vec<usize>)>, HesError> {
        for (ri, rule) in self.rules.iter().enumerate() {
            if cache[ri].is_none() {
                cache[ri] = Some(self.candidates(rule, mem, scope)?);
            }
            let list = cache[ri].as_mut().expect("filled above");
            list.retain(|c| {
                mem.lookup(&c.key).is_none() && !failed.contains(&(ri, c.values.clone()))
            });
            while let Some(cand) = list.first().cloned() {
                let mut lookups = Vec::new();
                let mut subqueries = Vec::new();
                let spec = rule.consequent_spec();
                let value_expr = rule.consequent.args.last().expect("non-empty consequent");
                let value = if spec.functional {
                    let mut homology = |x: &Value, n: &Value| -> Result<Value, EvalError> {
                        let key: FactKey = ("homology".into(), vec![x.clone(), n.clone()]);
                        if let Some(i) = mem.lookup(&key) {
                            lookups.push(i);
                            return Ok(mem.facts[i].args[2].clone());
                        }
                        let (Value::Term(t), Value::Int(d)) = (x, n) else {
                            return Err(EvalError::Type(
                                "homology() needs a space and a degree".into(),
                            ));
                        };
                        if !rule.subquery || **t != *goal.0 || *d != goal.1 as i64 {
                            return Err(EvalError::Unavailable);
                        }
                        match oracle.homology(t, goal.1) {
                            Ok(Some(g)) => {
                                subqueries.push(SubQuestion {
                                    subject: (**t).clone(),
                                    degree: goal.1,
                                    answer: g.clone(),
                                });
                                Ok(Value::Group(g))
                            }
                            Ok(None) => Err(EvalError::Unavailable),
                            Err(e) => Err(EvalError::Oracle(e)),
                        }
                    };
                    eval(value_expr, &cand.values, &mut homology).map(Some)
                } else {
                    Ok(None)
                };
                let value = match value {
                    Ok(v) => v,
                    Err(EvalError::Unavailable) => {
                        failed.insert((ri, cand.values));
                        list.remove(0);
                        continue;
                    }
                    Err(EvalError::Type(m)) => {
                        return Err(HesError::Rule {
                            rule: rule.id.clone(),
                            message: m,
                        })
                    }
                    Err(EvalError::Oracle(source)) => {
                        return Err(HesError::Oracle {
                            source,
                            partial: Trace::default(),
                        })
                    }
                };
                let mut args = cand.key.1.clone();
                args.extend(value);
                let produced = Fact {
                    pred: rule.consequent.pred.clone(),
                    args,
                };
                if let Some((slot, v)) = spec
                    .slots
                    .iter()
                    .zip(&produced.args)
                    .find(|(s, v)| !fits(**s, v))
                {
                    return Err(HesError::Rule {
                        rule: rule.id.clone(),
                        message: format!(
                            "value {v} does not fit slot {slot:?} of {}",
                            produced.pred
                        ),
                    });
                }
                list.remove(0);
                let mut consumed = cand.consumed.clone();
                consumed.extend(lookups);
                let step = TraceStep {
                    rule: rule.id.clone(),
                    cite: rule.cite.clone(),
                    bindings: rule.vars.iter().cloned().zip(cand.values).collect(),
                    consumed: consumed.iter().map(|&i| mem.facts[i].clone()).collect(),
                    produced: produced.clone(),
                    subqueries,
                };
                mem.insert(produced).expect("candidate key was absent");
                return Ok(Some((step, consumed)));
            }
        }
        Ok(None)
    }

    /// All activations of `rule` whose consequent is new, preferred first.
    fn candidates(
        &self,
        rule: &Rule,
        mem: &Memory,
        scope: &Scope,
    ) -> Result<Vec<Candidate>, HesError> {
        let rule_err = |m: String| HesError::Rule {
            rule: rule.id.clone(),
            message: m,
        };
        let mut partial: Vec<(Vec<Option<Value>>, Vec<usize>)> =
            vec![(vec![None; rule.vars.len()], Vec::new())];
        for pat in &rule.antecedents {
            let mut next = Vec::new();
            for (binding, used) in &partial {
                let first = match pat.args.first() {
                    Some(Expr::Var(i)) => binding[*i].as_ref(),
                    _ => None,
                };
                for &fi in mem.candidates_for(&pat.pred, first) {
                    if let Some(b) = unify(pat, &mem.facts[fi], binding) {
                        let mut u = used.clone();
                        u.push(fi);
                        next.push((b, u));
                    }
                }
            }
            partial = next;
            if partial.is_empty() {
                return Ok(Vec::new());
            }
        }

        let spec = rule.consequent_spec();
        let free = rule.vars.len() - rule.bound;
        let range = (scope.max_degree + 1) as usize;
        let combos = range
            .checked_pow(free as u32)
            .ok_or_else(|| rule_err("too many free variables".into()))?;
        let mut out = Vec::new();
        for (binding, used) in partial {
            let mut values: Vec<Value> = binding
                .into_iter()
                .map(|v| v.unwrap_or(Value::Int(0)))
                .collect();
            'combo: for mut c in 0..combos {
                for slot in values[rule.bound..].iter_mut() {
                    *slot = Value::Int((c % range) as i64);
                    c /= range;
                }
                for g in &rule.guards {
                    match guard_holds(g, &values) {
                        Ok(true) => {}
                        Ok(false) => continue 'combo,
                        Err(EvalError::Type(m)) => return Err(rule_err(m)),
                        Err(_) => continue 'combo,
                    }
                }
                let key_len = if spec.functional {
                    spec.slots.len() - 1
                } else {
                    spec.slots.len()
                };
                let mut key_args = Vec::with_capacity(key_len);
                let mut no_homology = |_: &Value, _: &Value| Err(EvalError::Unavailable);
                for (arg, slot) in rule.consequent.args[..key_len].iter().zip(spec.slots) {
                    let v = match eval(arg, &values, &mut no_homology) {
                        Ok(v) => v,
                        Err(EvalError::Type(m)) => return Err(rule_err(m)),
                        Err(_) => continue 'combo,
                    };
                    let in_scope = match (slot, &v) {
                        (Slot::Space, Value::Term(t)) => scope.subjects.contains(t),
                        (Slot::Degree, Value::Int(n)) => (0..=scope.max_degree).contains(n),
                        (s, v) => fits(*s, v),
                    };
                    if !in_scope {
                        continue 'combo;
                    }
                    key_args.push(v);
                }
                let key = (rule.consequent.pred.clone(), key_args);
                if mem.lookup(&key).is_none() {
                    let mut recency = used.clone();
                    recency.sort_unstable_by(|a, b| b.cmp(a));
                    out.push((
                        recency,
                        Candidate {
                            values: values.clone(),
                            consumed: used.clone(),
                            key,
                        },
                    ));
                }
            }
        }
        // Most recent facts first; the sort is stable, so equally recent
        // activations keep enumeration order (ascending free degrees).
        out.sort_by(|a, b| b.0.cmp(&a.0));
        Ok(out.into_iter().map(|(_, c)| c).collect())
    }

    /// Re-derives every step of `trace` from `initial`, checking that each
    /// consumed fact is already known, guards hold and the produced fact
    /// follows from the rule. Returns the last produced fact.
    pub fn replay(&self, initial: &[Fact], trace: &Trace) -> Result<Option<Fact>, ReplayError> {
        let mut mem = Memory::default();
        for f in initial {
            mem.insert(f.clone());
        }
        let mut last = None;
        for (i, step) in trace.steps.iter().enumerate() {
            let fail = |message: String| ReplayError { step: i, message };
            let rule = self
                .rule(&step.rule)
                .ok_or_else(|| fail(format!("unknown rule {}", step.rule)))?;
            if step.cite != rule.cite {
                return Err(fail("citation does not match the rule".into()));
            }
            let names_match = step.bindings.len() == rule.vars.len()
                && step
                    .bindings
                    .iter()
                    .zip(&rule.vars)
                    .all(|((a, _), b)| a == b);
            if !names_match {
                return Err(fail("bindings do not match the rule's variables".into()));
            }
            let values: Vec<Value> = step.bindings.iter().map(|(_, v)| v.clone()).collect();
            let n_ante = rule.antecedents.len();
            if step.consumed.len() < n_ante {
                return Err(fail("fewer consumed facts than antecedents".into()));
            }
            for (pat, fact) in rule.antecedents.iter().zip(&step.consumed) {
                if instantiate(pat, &values) != *fact {
                    return Err(fail(format!(
                        "{fact} does not match antecedent {}",
                        pat.pred
                    )));
                }
            }
            if let Some(f) = step.consumed.iter().find(|f| !mem.contains(f)) {
                return Err(fail(format!("{f} is not known before this step")));
            }
            for g in &rule.guards {
                if !matches!(guard_holds(g, &values), Ok(true)) {
                    return Err(fail("a guard does not hold".into()));
                }
            }
            if !rule.subquery && !step.subqueries.is_empty() {
                return Err(fail(
                    "sub-question issued by a rule without subquery".into(),
                ));
            }
            let extra = &step.consumed[n_ante..];
            let mut homology = |x: &Value, n: &Value| -> Result<Value, EvalError> {
                if let (Value::Term(t), Value::Int(d)) = (x, n) {
                    if let Some(q) = step
                        .subqueries
                        .iter()
                        .find(|q| q.subject == **t && q.degree as i64 == *d)
                    {
                        return Ok(Value::Group(q.answer.clone()));
                    }
                }
                extra
                    .iter()
                    .find(|f| f.pred == "homology" && f.args[0] == *x && f.args[1] == *n)
                    .map(|f| f.args[2].clone())
                    .ok_or(EvalError::Unavailable)
            };
            let mut args = Vec::with_capacity(rule.consequent.args.len());
            for a in &rule.consequent.args {
                args.push(
                    eval(a, &values, &mut homology)
                        .map_err(|_| fail("consequent cannot be evaluated".into()))?,
                );
            }
            let produced = Fact {
                pred: rule.consequent.pred.clone(),
                args,
            };
            if produced != step.produced {
                return Err(fail(format!(
                    "rule yields {produced}, trace says {}",
                    step.produced
                )));
            }
            if mem.insert(produced.clone()).is_none() {
                return Err(fail(format!("{produced} was already determined")));
            }
            last = Some(produced);
        }
        Ok(last)
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("replay failed at step {step}: {message}")]
pub struct ReplayError {
    pub step: usize,
    pub message: String,
}

fn unify(p: &Pattern, f: &Fact, binding: &[Option<Value>]) -> Option<Vec<Option<Value>>> {
    if p.pred != f.pred || p.args.len() != f.args.len() {
        return None;
    }
    let mut b = binding.to_vec();
    for (a, v) in p.args.iter().zip(&f.args) {
        match a {
            Expr::Var(i) => match &b[*i] {
                Some(bound) if bound != v => return None,
                Some(_) => {}
                None => b[*i] = Some(v.clone()),
            },
            Expr::Int(c) if *v != Value::Int(*c) => return None,
            Expr::Inf if *v != Value::Inf => return None,
            _ => {}
        }
    }
    Some(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use crate::simplicial;
    use proptest::prelude::*;

    fn simplicial_oracle() -> impl FnMut(&Term, usize) -> Result<Option<FgAbelianGroup>, OracleError>
    {
        |t: &Term, n: usize| {
            let e = SpaceExpr::from_term(t)?;
            Ok(Some(simplicial::homology(&e, n)?))
        }
    }

    fn run(expr: &str, degree: usize) -> Inference {
        let base = RuleBase::builtin();
        let subject = parse(expr).unwrap();
        let inf = base
            .infer(&subject, degree, &[], &mut simplicial_oracle())
            .unwrap();
        let replayed = base.replay(&inf.initial_facts, &inf.trace).unwrap();
        match &inf.value {
            Some(v) => {
                let goal = Fact::new(
                    "homotopy",
                    vec![
                        Value::term(subject),
                        Value::Int(degree as i64),
                        Value::Group(v.clone()),
                    ],
                );
                assert_eq!(replayed, Some(goal));
            }
            None => assert_eq!(replayed, None),
        }
        inf
    }

    fn rule_ids(t: &Trace) -> Vec<&str> {
        t.steps.iter().map(|s| s.rule.as_str()).collect()
    }

    #[test]
    fn shipped_base_loads() {
        let base = RuleBase::builtin();
        assert!(base.len() >= 12);
        let ids: HashSet<&str> = base.rules().iter().map(Rule::id).collect();
        assert_eq!(ids.len(), base.len());
        assert!(base.rule("R9").unwrap().may_subquery());
        assert!(!base.rule("R1").unwrap().may_subquery());
    }

    #[test]
    fn product_of_simplices() {
        let inf = run("D(4)*D(5)", 4);
        assert_eq!(inf.value, Some(FgAbelianGroup::zero()));
        assert_eq!(rule_ids(&inf.trace), ["R3", "R3", "R4", "R1"]);
        assert_eq!(inf.trace.subqueries().count(), 0);
        let text = explain(&inf.trace);
        assert_eq!(text.lines().count(), 4);
        assert!(
            text.lines()
                .last()
                .unwrap()
                .starts_with("R1: contractible ⇒ πₙ=0"),
            "{text}"
        );
    }

    #[test]
    fn sphere_in_its_own_degree_asks_for_homology() {
        let inf = run("S(4)", 4);
        assert_eq!(inf.value, Some(FgAbelianGroup::integers()));
        let subs: Vec<_> = inf.trace.subqueries().collect();
        assert_eq!(subs.len(), 1);
        assert_eq!(subs[0].degree, 4);
        assert_eq!(subs[0].answer, FgAbelianGroup::integers());
        assert!(explain(&inf.trace).contains("asked H_4(S(4)) = Z"));
        assert_eq!(rule_ids(&inf.trace), ["R6", "R9"]);
    }

    #[test]
    fn below_connectivity_is_zero() {
        let inf = run("S(4)", 2);
        assert_eq!(inf.value, Some(FgAbelianGroup::zero()));
        assert_eq!(rule_ids(&inf.trace), ["R6", "R7"]);
    }

    #[test]
    fn above_the_sphere_dimension_is_unknown() {
        let inf = run("S(4)", 5);
        assert_eq!(inf.value, None);
        assert!(inf.trace.is_empty());
        assert_eq!(explain(&inf.trace), "no applicable rules");
    }

    #[test]
    fn eilenberg_maclane_and_circle() {
        assert_eq!(run("K(C(5),1)", 1).value, Some(FgAbelianGroup::cyclic(5)));
        assert_eq!(run("K(C(5),1)", 3).value, Some(FgAbelianGroup::zero()));
        assert_eq!(run("S(1)", 1).value, Some(FgAbelianGroup::integers()));
        assert_eq!(run("S(1)*S(1)", 1).value, Some(FgAbelianGroup::free(2)));
        assert_eq!(run("S(1)*S(1)", 3).value, Some(FgAbelianGroup::zero()));
        assert_eq!(run("RP2", 2).value, None);
    }

    #[test]
    fn mixed_product_uses_connectivity_of_factors() {
        // S2 x S3 is 1-connected; Hurewicz gives pi_2 = H_2 = Z.
        let inf = run("S(2)*S(3)", 2);
        assert_eq!(inf.value, Some(FgAbelianGroup::integers()));
        assert!(rule_ids(&inf.trace).contains(&"R12"));
        assert_eq!(run("S(3)*D(2)", 3).value, Some(FgAbelianGroup::integers()));
    }

    #[test]
    fn deterministic() {
        let a = run("S(2)*(D(1)*S(3))", 3);
        let b = run("S(2)*(D(1)*S(3))", 3);
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.value, b.value);
        assert_eq!(a.steps_fired, b.steps_fired);
    }

    #[test]
    fn unrelated_facts_do_not_change_the_answer() {
        let base = RuleBase::builtin();
        let subject = parse("D(4)*D(5)").unwrap();
        let plain = base.infer(&subject, 4, &[], &mut NoOracle).unwrap();
        let noise = [
            Fact::new("contractible", vec![Value::term(parse("S(7)").unwrap())]),
            Fact::new(
                "is_sphere",
                vec![Value::term(parse("S(7)").unwrap()), Value::Int(7)],
            ),
        ];
        let noisy = base.infer(&subject, 4, &noise, &mut NoOracle).unwrap();
        assert_eq!(plain.value, noisy.value);
        assert_eq!(plain.trace, noisy.trace);
    }

    #[test]
    fn tampered_traces_do_not_replay() {
        let base = RuleBase::builtin();
        let inf = run("D(4)*D(5)", 4);
        let mut forged = inf.trace.clone();
        forged.steps[3].produced.args[2] = Value::Group(FgAbelianGroup::integers());
        assert!(base.replay(&inf.initial_facts, &forged).is_err());
        let mut reordered = inf.trace.clone();
        reordered.steps.swap(0, 2);
        assert!(base.replay(&inf.initial_facts, &reordered).is_err());
        let mut cut = inf.trace.clone();
        cut.steps.remove(0);
        assert!(base.replay(&inf.initial_facts, &cut).is_err());
    }

    #[test]
    fn oracle_failures_propagate() {
        let base = RuleBase::builtin();
        let mut failing = |_: &Term, _: usize| -> Result<Option<FgAbelianGroup>, OracleError> {
            Err("kernel unavailable".into())
        };
        let err = base
            .infer(&parse("S(4)").unwrap(), 4, &[], &mut failing)
            .unwrap_err();
        match err {
            HesError::Oracle { source, partial } => {
                assert_eq!(source.to_string(), "kernel unavailable");
                assert!(!partial.is_empty());
            }
            other => panic!("unexpected {other}"),
        }
        // an oracle that cannot answer leaves the goal unknown
        assert!(base
            .infer(&parse("S(4)").unwrap(), 4, &[], &mut NoOracle)
            .unwrap()
            .value
            .is_none());
    }

    #[test]
    fn group_subjects_are_rejected() {
        let base = RuleBase::builtin();
        assert!(matches!(
            base.infer(&parse("C(5)").unwrap(), 1, &[], &mut NoOracle),
            Err(HesError::InvalidSubject(_))
        ));
    }

    const ONE_RULE: &str = r#"<rulebase>
  <rule id="A">
    <cite>x</cite>
    <ante>contractible(X)</ante>
    <cons>homotopy(X, m, zero)</cons>
  </rule>
</rulebase>"#;

    #[test]
    fn unbound_consequent_variable_is_rejected() {
        let err = RuleBase::load(ONE_RULE).unwrap_err();
        assert_eq!(err.line, 5);
        assert!(err.message.contains("not bound"), "{err}");
    }

    #[test]
    fn duplicate_ids_and_syntax_errors_carry_lines() {
        let dup = "<rulebase>\n<rule id=\"A\"><cite>c</cite><ante>contractible(X)</ante><cons>contractible(X)</cons></rule>\n\
                   <rule id=\"A\"><cite>c</cite><ante>contractible(X)</ante><cons>contractible(X)</cons></rule>\n</rulebase>";
        let err = RuleBase::load(dup).unwrap_err();
        assert_eq!(err.line, 3);
        assert!(err.message.contains("duplicate"));

        let bad = "<rulebase>\n<rule id=\"B\">\n<cite>c</cite>\n<ante>contractible(X</ante>\n<cons>contractible(X)</cons></rule></rulebase>";
        assert_eq!(RuleBase::load(bad).unwrap_err().line, 4);
        let unknown = "<rulebase><rule id=\"C\"><cite>c</cite><ante>shiny(X)</ante><cons>contractible(X)</cons></rule></rulebase>";
        assert!(RuleBase::load(unknown)
            .unwrap_err()
            .message
            .contains("unknown predicate"));
        assert!(RuleBase::load("<rulebase><rule id=\"D\">").is_err());
    }

    #[test]
    fn custom_rule_files_are_honoured() {
        let src = r#"<rulebase>
  <rule id="only">
    <cite>every sphere is simply connected</cite>
    <ante>is_sphere(X, d)</ante>
    <guard>d &gt;= 2</guard>
    <cons>homotopy(X, 1, zero)</cons>
  </rule>
</rulebase>"#;
        let base = RuleBase::load(src).unwrap();
        let inf = base
            .infer(&parse("S(3)").unwrap(), 1, &[], &mut NoOracle)
            .unwrap();
        assert_eq!(inf.value, Some(FgAbelianGroup::zero()));
        assert_eq!(
            explain(&inf.trace),
            "only: every sphere is simply connected [X=S(3), d=3] => homotopy(S(3), 1, 0)"
        );
        assert!(base
            .infer(&parse("S(1)").unwrap(), 1, &[], &mut NoOracle)
            .unwrap()
            .value
            .is_none());
    }

    fn space() -> impl Strategy<Value = String> {
        let leaf = prop_oneof![
            (1u32..5).prop_map(|n| format!("S({n})")),
            (0u32..4).prop_map(|n| format!("D({n})")),
            Just("RP2".to_string()),
            (2u32..6, 1u32..3).prop_map(|(m, n)| format!("K(C({m}),{n})")),
        ];
        leaf.prop_recursive(5, 8, 2, |inner| {
            (inner.clone(), inner).prop_map(|(a, b)| format!("({a})*({b})"))
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn inference_terminates_and_replays(src in space(), degree in 0usize..=10) {
            let base = RuleBase::builtin();
            let subject = parse(&src).unwrap();
            let mut oracle = |_: &Term, _: usize| -> Result<Option<FgAbelianGroup>, OracleError> {
                Ok(Some(FgAbelianGroup::integers()))
            };
            let inf = base.infer_with_fuel(&subject, degree, &[], &mut oracle, 20_000).unwrap();
            prop_assert!(inf.trace.subqueries().count() <= 1);
            let last = base.replay(&inf.initial_facts, &inf.trace).unwrap();
            prop_assert_eq!(last.is_some(), inf.value.is_some());
        }
    }
}
