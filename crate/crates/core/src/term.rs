//! OpenMath-subset terms: the common language of every message exchanged
//! between the broker and its kernels, and the source of cache keys.
//!
//! Only applications, symbols, integers, strings and variables are
//! supported. Every symbol must come from one of the compiled-in content
//! dictionaries (see [`Registry`]).

use std::fmt;

use num_bigint::BigInt;
use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Symbol {
    pub cd: String,
    pub name: String,
}

impl Symbol {
    pub fn new(cd: impl Into<String>, name: impl Into<String>) -> Self {
        Symbol {
            cd: cd.into(),
            name: name.into(),
        }
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.cd, self.name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Term {
    Symbol(Symbol),
    Integer(BigInt),
    Str(String),
    Var(String),
    Apply { head: Symbol, args: Vec<Term> },
}

impl Term {
    pub fn sym(cd: &str, name: &str) -> Term {
        Term::Symbol(Symbol::new(cd, name))
    }

    pub fn int(v: impl Into<BigInt>) -> Term {
        Term::Integer(v.into())
    }

    pub fn str(s: impl Into<String>) -> Term {
        Term::Str(s.into())
    }

    pub fn apply(cd: &str, name: &str, args: Vec<Term>) -> Term {
        Term::Apply {
            head: Symbol::new(cd, name),
            args,
        }
    }

    /// Head symbol of an application, or the symbol itself for a bare symbol.
    pub fn head(&self) -> Option<&Symbol> {
        match self {
            Term::Apply { head, .. } => Some(head),
            Term::Symbol(s) => Some(s),
            _ => None,
        }
    }

    pub fn args(&self) -> &[Term] {
        match self {
            Term::Apply { args, .. } => args,
            _ => &[],
        }
    }

    pub fn is(&self, cd: &str, name: &str) -> bool {
        self.head().is_some_and(|s| s.cd == cd && s.name == name)
    }

    pub fn as_integer(&self) -> Option<&BigInt> {
        match self {
            Term::Integer(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        self.as_integer().and_then(|v| i64::try_from(v).ok())
    }

    /// Checks the term against the built-in registry.
    pub fn validate(&self) -> Result<(), TermError> {
        match self {
            Term::Symbol(s) => Registry::builtin().check(s, None),
            Term::Integer(_) | Term::Str(_) => Ok(()),
            Term::Var(name) => {
                if is_identifier(name) {
                    Ok(())
                } else {
                    Err(TermError::BadName(name.clone()))
                }
            }
            Term::Apply { head, args } => {
                if args.is_empty() {
                    return Err(TermError::EmptyApplication(head.to_string()));
                }
                Registry::builtin().check(head, Some(args.len()))?;
                args.iter().try_for_each(Term::validate)
            }
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TermError {
    #[error("unknown symbol {0}")]
    UnknownSymbol(String),
    #[error("symbol {symbol} applied to {got} arguments")]
    Arity { symbol: String, got: usize },
    #[error("application of {0} has no arguments")]
    EmptyApplication(String),
    #[error("invalid name {0:?}")]
    BadName(String),
    #[error("bad integer literal {0:?}")]
    BadInteger(String),
    #[error("unknown element <{0}>")]
    UnknownElement(String),
    #[error("malformed XML: {0}")]
    Malformed(String),
}

pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic())
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arity {
    Exactly(usize),
    AtLeast(usize),
}

impl Arity {
    fn admits(self, n: usize) -> bool {
        match self {
            Arity::Exactly(k) => n == k,
            Arity::AtLeast(k) => n >= k,
        }
    }
}

type Dictionary = (&'static str, &'static [(&'static str, Arity)]);

const DICTIONARIES: &[Dictionary] = &[
    (
        "algtop1",
        &[
            ("sphere", Arity::Exactly(1)),
            ("simplex", Arity::Exactly(1)),
            ("cartesian_product", Arity::Exactly(2)),
            ("em_space", Arity::Exactly(2)),
            ("rp2", Arity::Exactly(0)),
            ("homology", Arity::Exactly(2)),
            ("homotopy_group", Arity::Exactly(2)),
        ],
    ),
    (
        "grp1",
        &[
            ("cyclic_group", Arity::Exactly(1)),
            ("direct_product", Arity::AtLeast(2)),
            ("group_homology", Arity::Exactly(2)),
        ],
    ),
    (
        "res1",
        &[
            ("fg_abelian", Arity::Exactly(2)),
            ("unknown", Arity::Exactly(0)),
        ],
    ),
    (
        "proto1",
        &[
            ("procedure_call", Arity::AtLeast(2)),
            ("procedure_completed", Arity::Exactly(2)),
            ("procedure_terminated", Arity::Exactly(2)),
            ("call_id", Arity::Exactly(1)),
        ],
    ),
    (
        "cert1",
        &[
            ("mult_table", Arity::Exactly(2)),
            ("certify", Arity::Exactly(1)),
            ("report", Arity::AtLeast(1)),
            ("obligation", Arity::Exactly(3)),
        ],
    ),
];

/// The compiled-in content dictionaries.
#[derive(Debug, Clone, Copy)]
pub struct Registry {
    dictionaries: &'static [Dictionary],
}

impl Registry {
    pub fn builtin() -> Registry {
        Registry {
            dictionaries: DICTIONARIES,
        }
    }

    pub fn dictionaries(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.dictionaries.iter().map(|(cd, _)| *cd)
    }

    pub fn symbols(&self, cd: &str) -> Option<&'static [(&'static str, Arity)]> {
        self.dictionaries
            .iter()
            .find(|(name, _)| *name == cd)
            .map(|(_, syms)| *syms)
    }

    pub fn arity(&self, sym: &Symbol) -> Option<Arity> {
        self.symbols(&sym.cd)?
            .iter()
            .find(|(n, _)| *n == sym.name)
            .map(|(_, a)| *a)
    }

    /// `applied_to` is the argument count when the symbol heads an application.
    fn check(&self, sym: &Symbol, applied_to: Option<usize>) -> Result<(), TermError> {
        let arity = self
            .arity(sym)
            .ok_or_else(|| TermError::UnknownSymbol(sym.to_string()))?;
        match applied_to {
            Some(n) if !arity.admits(n) => Err(TermError::Arity {
                symbol: sym.to_string(),
                got: n,
            }),
            _ => Ok(()),
        }
    }
}

/// Encodes a term as a single-line `OMOBJ` document.
pub fn encode(t: &Term) -> Result<String, TermError> {
    t.validate()?;
    let mut out = String::from("<OMOBJ>");
    encode_into(t, &mut out);
    out.push_str("</OMOBJ>");
    Ok(out)
}

fn encode_into(t: &Term, out: &mut String) {
    match t {
        Term::Symbol(s) => encode_symbol(s, out),
        Term::Integer(v) => {
            out.push_str("<OMI>");
            out.push_str(&v.to_string());
            out.push_str("</OMI>");
        }
        Term::Str(s) => {
            out.push_str("<OMSTR>");
            escape_into(s, out);
            out.push_str("</OMSTR>");
        }
        Term::Var(name) => {
            out.push_str("<OMV name=\"");
            out.push_str(name);
            out.push_str("\"/>");
        }
        Term::Apply { head, args } => {
            out.push_str("<OMA>");
            encode_symbol(head, out);
            for a in args {
                encode_into(a, out);
            }
            out.push_str("</OMA>");
        }
    }
}

fn encode_symbol(s: &Symbol, out: &mut String) {
    out.push_str("<OMS cd=\"");
    out.push_str(&s.cd);
    out.push_str("\" name=\"");
    out.push_str(&s.name);
    out.push_str("\"/>");
}

fn escape_into(s: &str, out: &mut String) {
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\n' => out.push_str("&#10;"),
            '\r' => out.push_str("&#13;"),
            c => out.push(c),
        }
    }
}

/// Whitespace-free canonical form, injective on valid terms.
pub fn canonical_key(t: &Term) -> Result<String, TermError> {
    t.validate()?;
    let mut out = String::new();
    key_into(t, &mut out);
    Ok(out)
}

fn key_into(t: &Term, out: &mut String) {
    match t {
        Term::Symbol(s) => {
            out.push_str(&s.cd);
            out.push('.');
            out.push_str(&s.name);
        }
        Term::Integer(v) => {
            out.push('#');
            out.push_str(&v.to_string());
        }
        Term::Str(s) => {
            out.push('"');
            for b in s.bytes() {
                if b.is_ascii_alphanumeric() || b == b'_' || b == b'-' || b == b'.' {
                    out.push(b as char);
                } else {
                    out.push_str(&format!("%{b:02X}"));
                }
            }
            out.push('"');
        }
        Term::Var(name) => {
            out.push('$');
            out.push_str(name);
        }
        Term::Apply { head, args } => {
            out.push_str(&head.cd);
            out.push('.');
            out.push_str(&head.name);
            out.push('(');
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                key_into(a, out);
            }
            out.push(')');
        }
    }
}

/// Parses an `OMOBJ` document. Whitespace between elements is ignored.
pub fn decode(xml: &str) -> Result<Term, TermError> {
    let mut reader = Reader::from_str(xml);
    let mut parser = Parser {
        reader: &mut reader,
    };
    let term = match parser.next_significant()? {
        Event::Start(e) if e.name().as_ref() == b"OMOBJ" => {
            let t = parser.element()?;
            parser.expect_end(b"OMOBJ")?;
            t
        }
        Event::Start(e) | Event::Empty(e) => {
            return Err(TermError::UnknownElement(element_name(&e)))
        }
        other => {
            return Err(TermError::Malformed(format!(
                "expected <OMOBJ>, found {other:?}"
            )))
        }
    };
    match parser.next_significant()? {
        Event::Eof => {}
        other => return Err(TermError::Malformed(format!("trailing content {other:?}"))),
    }
    term.validate()?;
    Ok(term)
}

struct Parser<'a, 'x> {
    reader: &'a mut Reader<&'x [u8]>,
}

fn element_name(e: &BytesStart<'_>) -> String {
    String::from_utf8_lossy(e.name().as_ref()).into_owned()
}

fn malformed(e: impl fmt::Display) -> TermError {
    TermError::Malformed(e.to_string())
}

impl<'x> Parser<'_, 'x> {
    fn raw_next(&mut self) -> Result<Event<'x>, TermError> {
        self.reader.read_event().map_err(malformed)
    }

    /// Next event that is not inter-element whitespace, a comment or a declaration.
    fn next_significant(&mut self) -> Result<Event<'x>, TermError> {
        loop {
            match self.raw_next()? {
                Event::Text(t) => {
                    let raw = t.into_inner();
                    if raw.iter().all(u8::is_ascii_whitespace) {
                        continue;
                    }
                    return Err(TermError::Malformed(format!(
                        "unexpected text {:?}",
                        String::from_utf8_lossy(&raw)
                    )));
                }
                Event::Comment(_) | Event::Decl(_) => continue,
                e => return Ok(e),
            }
        }
    }

    fn expect_end(&mut self, name: &[u8]) -> Result<(), TermError> {
        match self.next_significant()? {
            Event::End(e) if e.name().as_ref() == name => Ok(()),
            other => Err(TermError::Malformed(format!(
                "expected </{}>, found {other:?}",
                String::from_utf8_lossy(name)
            ))),
        }
    }

    fn element(&mut self) -> Result<Term, TermError> {
        match self.next_significant()? {
            Event::Empty(e) => self.empty_element(&e),
            Event::Start(e) => self.started_element(e),
            other => Err(TermError::Malformed(format!(
                "expected element, found {other:?}"
            ))),
        }
    }

    fn started_element(&mut self, e: BytesStart<'x>) -> Result<Term, TermError> {
        match e.name().as_ref() {
            b"OMI" => {
                let text = self.text_until(b"OMI")?;
                parse_integer(text.trim())
            }
            b"OMSTR" => Ok(Term::Str(self.text_until(b"OMSTR")?)),
            b"OMA" => {
                let head = match self.element()? {
                    Term::Symbol(s) => s,
                    other => {
                        return Err(TermError::Malformed(format!(
                            "application head must be a symbol, found {other:?}"
                        )))
                    }
                };
                let mut args = Vec::new();
                loop {
                    match self.next_significant()? {
                        Event::End(end) if end.name().as_ref() == b"OMA" => break,
                        Event::Empty(inner) => args.push(self.empty_element(&inner)?),
                        Event::Start(inner) => args.push(self.started_element(inner)?),
                        other => {
                            return Err(TermError::Malformed(format!(
                                "unexpected {other:?} inside <OMA>"
                            )))
                        }
                    }
                }
                Ok(Term::Apply { head, args })
            }
            b"OMS" | b"OMV" => {
                let t = self.empty_element(&e)?;
                self.expect_end(e.name().as_ref())?;
                Ok(t)
            }
            _ => Err(TermError::UnknownElement(element_name(&e))),
        }
    }

    fn empty_element(&self, e: &BytesStart<'_>) -> Result<Term, TermError> {
        match e.name().as_ref() {
            b"OMS" => {
                let cd = attribute(e, b"cd")?;
                let name = attribute(e, b"name")?;
                if !is_identifier(&cd) {
                    return Err(TermError::BadName(cd));
                }
                if !is_identifier(&name) {
                    return Err(TermError::BadName(name));
                }
                let sym = Symbol { cd, name };
                Registry::builtin().check(&sym, None)?;
                Ok(Term::Symbol(sym))
            }
            b"OMV" => {
                let name = attribute(e, b"name")?;
                if !is_identifier(&name) {
                    return Err(TermError::BadName(name));
                }
                Ok(Term::Var(name))
            }
            b"OMSTR" => Ok(Term::Str(String::new())),
            b"OMI" => Err(TermError::BadInteger(String::new())),
            _ => Err(TermError::UnknownElement(element_name(e))),
        }
    }

    fn text_until(&mut self, name: &[u8]) -> Result<String, TermError> {
        let mut text = String::new();
        loop {
            match self.raw_next()? {
                Event::Text(t) => text.push_str(&t.unescape().map_err(malformed)?),
                Event::CData(c) => {
                    text.push_str(std::str::from_utf8(&c.into_inner()).map_err(malformed)?)
                }
                Event::End(e) if e.name().as_ref() == name => return Ok(text),
                other => {
                    return Err(TermError::Malformed(format!(
                        "unexpected {other:?} inside <{}>",
                        String::from_utf8_lossy(name)
                    )))
                }
            }
        }
    }
}

fn attribute(e: &BytesStart<'_>, key: &[u8]) -> Result<String, TermError> {
    for attr in e.attributes() {
        let attr = attr.map_err(malformed)?;
        if attr.key.as_ref() == key {
            return Ok(attr.unescape_value().map_err(malformed)?.into_owned());
        }
    }
    Err(TermError::Malformed(format!(
        "<{}> lacks attribute {}",
        element_name(e),
        String::from_utf8_lossy(key)
    )))
}

fn parse_integer(s: &str) -> Result<Term, TermError> {
    let digits = s.strip_prefix('-').unwrap_or(s);
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return Err(TermError::BadInteger(s.to_string()));
    }
    s.parse::<BigInt>()
        .map(Term::Integer)
        .map_err(|_| TermError::BadInteger(s.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere4() -> Term {
        Term::apply("algtop1", "sphere", vec![Term::int(4)])
    }

    #[test]
    fn encodes_integer() {
        assert_eq!(
            encode(&Term::int(5)).unwrap(),
            "<OMOBJ><OMI>5</OMI></OMOBJ>"
        );
    }

    #[test]
    fn encodes_application() {
        assert_eq!(
            encode(&sphere4()).unwrap(),
            r#"<OMOBJ><OMA><OMS cd="algtop1" name="sphere"/><OMI>4</OMI></OMA></OMOBJ>"#
        );
    }

    #[test]
    fn unknown_symbol_is_named() {
        let err = encode(&Term::sym("badcd", "foo")).unwrap_err();
        assert_eq!(err.to_string(), "unknown symbol badcd.foo");
    }

    #[test]
    fn arity_is_enforced() {
        let t = Term::apply("algtop1", "sphere", vec![Term::int(1), Term::int(2)]);
        assert!(matches!(encode(&t), Err(TermError::Arity { .. })));
        let t = Term::apply("grp1", "direct_product", vec![Term::int(1)]);
        assert!(matches!(t.validate(), Err(TermError::Arity { .. })));
    }

    #[test]
    fn decodes_cyclic_group() {
        let t =
            decode(r#"<OMOBJ><OMA><OMS cd="grp1" name="cyclic_group"/><OMI>5</OMI></OMA></OMOBJ>"#)
                .unwrap();
        assert_eq!(t, Term::apply("grp1", "cyclic_group", vec![Term::int(5)]));
    }

    #[test]
    fn decode_tolerates_whitespace() {
        let t = decode(
            "  <OMOBJ>\n  <OMA>\n    <OMS cd=\"grp1\" name=\"cyclic_group\" />\n    <OMI> 5 </OMI>\n  </OMA>\n</OMOBJ>\n",
        )
        .unwrap();
        assert_eq!(t, Term::apply("grp1", "cyclic_group", vec![Term::int(5)]));
    }

    #[test]
    fn decode_rejects_bad_integer() {
        let err = decode("<OMOBJ><OMI>xy</OMI></OMOBJ>").unwrap_err();
        assert!(err.to_string().starts_with("bad integer literal"), "{err}");
    }

    #[test]
    fn decode_rejects_unknown_element_and_symbol() {
        assert!(matches!(
            decode("<OMOBJ><OMFLOAT dec=\"1.0\"/></OMOBJ>"),
            Err(TermError::UnknownElement(_))
        ));
        assert!(matches!(
            decode(r#"<OMOBJ><OMS cd="badcd" name="foo"/></OMOBJ>"#),
            Err(TermError::UnknownSymbol(_))
        ));
        assert!(matches!(
            decode("<OMOBJ><OMI>5</OMI>"),
            Err(TermError::Malformed(_))
        ));
    }

    #[test]
    fn strings_survive_markup_and_newlines() {
        let t = Term::str("a <b> & \"c\"\nd");
        let xml = encode(&t).unwrap();
        assert!(!xml.contains('\n'));
        assert_eq!(decode(&xml).unwrap(), t);
        assert_eq!(decode("<OMOBJ><OMSTR/></OMOBJ>").unwrap(), Term::str(""));
        assert_eq!(
            decode("<OMOBJ><OMSTR>  </OMSTR></OMOBJ>").unwrap(),
            Term::str("  ")
        );
    }

    #[test]
    fn keys_are_deterministic_and_order_sensitive() {
        assert_eq!(
            canonical_key(&Term::int(5)).unwrap(),
            canonical_key(&Term::int(5)).unwrap()
        );
        assert_ne!(
            canonical_key(&Term::int(5)).unwrap(),
            canonical_key(&Term::int(6)).unwrap()
        );
        let a = Term::apply("grp1", "cyclic_group", vec![Term::int(2)]);
        let b = Term::apply("grp1", "cyclic_group", vec![Term::int(3)]);
        let ab = Term::apply("grp1", "direct_product", vec![a.clone(), b.clone()]);
        let ba = Term::apply("grp1", "direct_product", vec![b, a]);
        assert_ne!(canonical_key(&ab).unwrap(), canonical_key(&ba).unwrap());
        assert_eq!(
            canonical_key(&Term::str("a b")).unwrap(),
            "\"a%20b\"".to_string()
        );
    }
}
