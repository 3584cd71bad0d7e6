//! Group-axiom certification for finite multiplication tables.
//!
//! A table is rendered as an encapsulate-style obligation document (an
//! abstract operation constrained by the four group axioms, with the table as
//! its local witness) and the obligations are discharged by exhaustive
//! evaluation.

use std::fmt::{self, Write as _};

use thiserror::Error;

use crate::term::Term;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CertifierError {
    #[error("malformed table: {0}")]
    Malformed(String),
}

fn malformed(msg: impl Into<String>) -> CertifierError {
    CertifierError::Malformed(msg.into())
}

/// Square table of products `table[a][b] = a*b`. Entries are arbitrary
/// integers so that closure failures can be represented.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MultiplicationTable {
    table: Vec<Vec<i64>>,
    identity: usize,
}

impl MultiplicationTable {
    pub fn new(table: Vec<Vec<i64>>, identity: usize) -> Result<Self, CertifierError> {
        let n = table.len();
        if n == 0 {
            return Err(malformed("table is empty"));
        }
        if let Some((i, row)) = table.iter().enumerate().find(|(_, r)| r.len() != n) {
            return Err(malformed(format!(
                "row {i} has {} entries, expected {n}",
                row.len()
            )));
        }
        if identity >= n {
            return Err(malformed(format!("identity {identity} outside 0..{n}")));
        }
        Ok(MultiplicationTable { table, identity })
    }

    /// Addition table of `Z/n`.
    pub fn cyclic(n: usize) -> Self {
        let table = (0..n)
            .map(|a| (0..n).map(|b| ((a + b) % n) as i64).collect())
            .collect();
        MultiplicationTable::new(table, 0).expect("cyclic table is well-shaped")
    }

    pub fn order(&self) -> usize {
        self.table.len()
    }

    pub fn identity(&self) -> usize {
        self.identity
    }

    pub fn rows(&self) -> &[Vec<i64>] {
        &self.table
    }

    pub fn with_entry(&self, a: usize, b: usize, value: i64) -> Self {
        let mut t = self.clone();
        t.table[a][b] = value;
        t
    }

    /// `a*b`, or `None` when the product leaves the carrier.
    pub fn product(&self, a: usize, b: usize) -> Option<usize> {
        let v = self.table[a][b];
        (0..self.order() as i64).contains(&v).then_some(v as usize)
    }

    /// Text format: one row per line, entries separated by whitespace, `#`
    /// comments, and an optional `identity <k>` line (default 0).
    pub fn parse(text: &str) -> Result<Self, CertifierError> {
        let mut identity = 0;
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("identity") {
                identity = rest.trim().parse().map_err(|_| {
                    malformed(format!(
                        "line {}: bad identity {:?}",
                        lineno + 1,
                        rest.trim()
                    ))
                })?;
                continue;
            }
            let row = line
                .split_whitespace()
                .map(str::parse::<i64>)
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| malformed(format!("line {}: {e}", lineno + 1)))?;
            rows.push(row);
        }
        Self::new(rows, identity)
    }

    fn rows_text(&self) -> String {
        self.table
            .iter()
            .map(|r| r.iter().map(i64::to_string).collect::<Vec<_>>().join(" "))
            .collect::<Vec<_>>()
            .join(";")
    }

    /// `cert1.mult_table(identity, "r0;r1;...")` with space-separated entries.
    pub fn to_term(&self) -> Term {
        Term::apply(
            "cert1",
            "mult_table",
            vec![Term::int(self.identity as u64), Term::str(self.rows_text())],
        )
    }

    pub fn from_term(t: &Term) -> Result<Self, CertifierError> {
        if !t.is("cert1", "mult_table") {
            return Err(malformed("expected cert1.mult_table"));
        }
        let [identity, Term::Str(rows)] = t.args() else {
            return Err(malformed("mult_table takes an identity and a row string"));
        };
        let identity = identity
            .as_integer()
            .and_then(|v| usize::try_from(v).ok())
            .ok_or_else(|| malformed("identity must be a non-negative integer"))?;
        let table = rows
            .split(';')
            .map(|r| {
                r.split_whitespace()
                    .map(str::parse::<i64>)
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| malformed(e.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(table, identity)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axiom {
    Closure,
    Associativity,
    Identity,
    Inverse,
}

impl Axiom {
    pub const ALL: [Axiom; 4] = [
        Axiom::Closure,
        Axiom::Associativity,
        Axiom::Identity,
        Axiom::Inverse,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Axiom::Closure => "closure",
            Axiom::Associativity => "associativity",
            Axiom::Identity => "identity",
            Axiom::Inverse => "inverse",
        }
    }

    pub fn statement(self) -> &'static str {
        match self {
            Axiom::Closure => "for all x, y in G: x*y in G",
            Axiom::Associativity => "for all x, y, z in G: (x*y)*z = x*(y*z)",
            Axiom::Identity => "for all x in G: e*x = x and x*e = x",
            Axiom::Inverse => "for all x in G there is y in G with x*y = e and y*x = e",
        }
    }

    /// Whether `witness` violates this axiom in `t`, evaluated from scratch.
    pub fn violated_by(self, t: &MultiplicationTable, witness: &[usize]) -> bool {
        let n = t.order();
        if witness.iter().any(|&x| x >= n) {
            return false;
        }
        match (self, witness) {
            (Axiom::Closure, &[a, b]) => t.product(a, b).is_none(),
            (Axiom::Associativity, &[a, b, c]) => {
                let left = t.product(a, b).and_then(|ab| t.product(ab, c));
                let right = t.product(b, c).and_then(|bc| t.product(a, bc));
                matches!((left, right), (Some(l), Some(r)) if l != r)
            }
            (Axiom::Identity, &[a]) => {
                let e = t.identity();
                t.product(e, a) != Some(a) || t.product(a, e) != Some(a)
            }
            (Axiom::Inverse, &[a]) => inverse_of(t, a).is_none(),
            _ => false,
        }
    }
}

impl fmt::Display for Axiom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

fn inverse_of(t: &MultiplicationTable, a: usize) -> Option<usize> {
    let e = t.identity();
    (0..t.order()).find(|&b| t.product(a, b) == Some(e) && t.product(b, a) == Some(e))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Obligation {
    pub axiom: Axiom,
    pub statement: String,
    pub holds: bool,
    pub counterexample: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CertStatus {
    Certified,
    Failed,
}

impl CertStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            CertStatus::Certified => "certified",
            CertStatus::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CertReport {
    pub status: CertStatus,
    pub obligations: Vec<Obligation>,
}

impl CertReport {
    pub fn is_certified(&self) -> bool {
        self.status == CertStatus::Certified
    }
}

impl fmt::Display for CertReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.status.as_str())?;
        for o in self.obligations.iter().filter(|o| !o.holds) {
            write!(f, "; {} fails", o.axiom)?;
            if let Some(cx) = &o.counterexample {
                let parts: Vec<String> = cx.iter().map(usize::to_string).collect();
                write!(f, " at ({})", parts.join(","))?;
            }
        }
        Ok(())
    }
}

impl CertReport {
    /// `cert1.report(status, cert1.obligation(axiom, "holds"|"fails", "a b c")...)`.
    pub fn to_term(&self) -> Term {
        let mut args = vec![Term::str(self.status.as_str())];
        args.extend(self.obligations.iter().map(|o| {
            let cx = o.counterexample.as_ref().map_or_else(String::new, |c| {
                c.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")
            });
            Term::apply(
                "cert1",
                "obligation",
                vec![
                    Term::str(o.axiom.id()),
                    Term::str(if o.holds { "holds" } else { "fails" }),
                    Term::str(cx),
                ],
            )
        }));
        Term::apply("cert1", "report", args)
    }

    pub fn from_term(t: &Term) -> Result<Self, CertifierError> {
        let bad = || malformed("not a certification report");
        if !t.is("cert1", "report") {
            return Err(bad());
        }
        let (status, rest) = t.args().split_first().ok_or_else(bad)?;
        let status = match status {
            Term::Str(s) if s == "certified" => CertStatus::Certified,
            Term::Str(s) if s == "failed" => CertStatus::Failed,
            _ => return Err(bad()),
        };
        let obligations = rest
            .iter()
            .map(|o| {
                let [Term::Str(axiom), Term::Str(holds), Term::Str(cx)] = o.args() else {
                    return Err(bad());
                };
                if !o.is("cert1", "obligation") {
                    return Err(bad());
                }
                let axiom = *Axiom::ALL
                    .iter()
                    .find(|a| a.id() == axiom)
                    .ok_or_else(bad)?;
                let holds = match holds.as_str() {
                    "holds" => true,
                    "fails" => false,
                    _ => return Err(bad()),
                };
                let counterexample = if cx.is_empty() {
                    None
                } else {
                    Some(
                        cx.split_whitespace()
                            .map(str::parse)
                            .collect::<Result<Vec<usize>, _>>()
                            .map_err(|_| bad())?,
                    )
                };
                Ok(Obligation {
                    axiom,
                    statement: axiom.statement().to_string(),
                    holds,
                    counterexample,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(CertReport {
            status,
            obligations,
        })
    }
}

/// First violation of `axiom` in lexicographic scan order.
fn first_violation(t: &MultiplicationTable, axiom: Axiom) -> Option<Vec<usize>> {
    let n = t.order();
    match axiom {
        Axiom::Closure => (0..n)
            .flat_map(|a| (0..n).map(move |b| vec![a, b]))
            .find(|w| axiom.violated_by(t, w)),
        Axiom::Associativity => (0..n)
            .flat_map(|a| (0..n).flat_map(move |b| (0..n).map(move |c| vec![a, b, c])))
            .find(|w| axiom.violated_by(t, w)),
        Axiom::Identity | Axiom::Inverse => {
            (0..n).map(|a| vec![a]).find(|w| axiom.violated_by(t, w))
        }
    }
}

pub fn check(t: &MultiplicationTable) -> CertReport {
    let obligations: Vec<Obligation> = Axiom::ALL
        .iter()
        .map(|&axiom| {
            let counterexample = first_violation(t, axiom);
            Obligation {
                axiom,
                statement: axiom.statement().to_string(),
                holds: counterexample.is_none(),
                counterexample,
            }
        })
        .collect();
    let status = if obligations.iter().all(|o| o.holds) {
        CertStatus::Certified
    } else {
        CertStatus::Failed
    };
    CertReport {
        status,
        obligations,
    }
}

fn quoted_list<I: IntoIterator<Item = String>>(items: I) -> String {
    format!("({})", items.into_iter().collect::<Vec<_>>().join(" "))
}

/// Encapsulate-style obligation document for `t`.
pub fn obligations(t: &MultiplicationTable) -> String {
    let n = t.order();
    let rows = quoted_list(
        t.rows()
            .iter()
            .map(|r| quoted_list(r.iter().map(i64::to_string))),
    );
    let inverses = quoted_list(
        (0..n).map(|a| inverse_of(t, a).map_or_else(|| "nil".to_string(), |b| b.to_string())),
    );
    let mut doc = String::new();
    let w = &mut doc;
    // writes to a String cannot fail
    let _ = writeln!(w, "; group obligations for a table of order {n}");
    let _ = writeln!(w, "(encapsulate");
    let _ = writeln!(w, " (((grp-op * *) => *)");
    let _ = writeln!(w, "  ((grp-id) => *)");
    let _ = writeln!(w, "  ((grp-inv *) => *)");
    let _ = writeln!(w, "  ((grp-elem-p *) => *))");
    let _ = writeln!(
        w,
        " (local (defun grp-elem-p (x) (and (natp x) (< x {n}))))"
    );
    let _ = writeln!(w, " (local (defun grp-id () {}))", t.identity());
    let _ = writeln!(w, " (local (defun grp-op (x y) (nth y (nth x '{rows}))))");
    let _ = writeln!(w, " (local (defun grp-inv (x) (nth x '{inverses})))");
    let _ = writeln!(w, " (defthm grp-closure");
    let _ = writeln!(w, "   (implies (and (grp-elem-p x) (grp-elem-p y))");
    let _ = writeln!(w, "            (grp-elem-p (grp-op x y))))");
    let _ = writeln!(w, " (defthm grp-associativity");
    let _ = writeln!(
        w,
        "   (implies (and (grp-elem-p x) (grp-elem-p y) (grp-elem-p z))"
    );
    let _ = writeln!(
        w,
        "            (equal (grp-op (grp-op x y) z) (grp-op x (grp-op y z)))))"
    );
    let _ = writeln!(w, " (defthm grp-identity");
    let _ = writeln!(w, "   (implies (grp-elem-p x)");
    let _ = writeln!(w, "            (and (equal (grp-op (grp-id) x) x)");
    let _ = writeln!(w, "                 (equal (grp-op x (grp-id)) x))))");
    let _ = writeln!(w, " (defthm grp-inverse");
    let _ = writeln!(w, "   (implies (grp-elem-p x)");
    let _ = writeln!(w, "            (and (grp-elem-p (grp-inv x))");
    let _ = writeln!(
        w,
        "                 (equal (grp-op x (grp-inv x)) (grp-id))"
    );
    let _ = writeln!(
        w,
        "                 (equal (grp-op (grp-inv x) x) (grp-id))))))"
    );
    doc
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cyclic_four_certifies() {
        let report = check(&MultiplicationTable::cyclic(4));
        assert!(report.is_certified());
        assert_eq!(report.obligations.len(), 4);
        assert_eq!(report.to_string(), "certified");
    }

    #[test]
    fn mutated_entry_breaks_associativity() {
        let t = MultiplicationTable::cyclic(4).with_entry(1, 1, 3);
        let report = check(&t);
        assert_eq!(report.status, CertStatus::Failed);
        let assoc = &report.obligations[1];
        assert_eq!(assoc.axiom, Axiom::Associativity);
        // (1*1)*2 = 3*2 = 1 but 1*(1*2) = 1*3 = 0; every earlier triple agrees.
        assert_eq!(assoc.counterexample, Some(vec![1, 1, 2]));
        assert!(Axiom::Associativity.violated_by(&t, &[1, 1, 2]));
        let others: Vec<bool> = report.obligations.iter().map(|o| o.holds).collect();
        assert_eq!(others, [true, false, true, true]);
    }

    #[test]
    fn trivial_group() {
        let t = MultiplicationTable::new(vec![vec![0]], 0).unwrap();
        assert!(check(&t).is_certified());
        assert_eq!(obligations(&t).matches("(defthm").count(), 4);
    }

    #[test]
    fn malformed_tables() {
        assert!(MultiplicationTable::new(vec![vec![0, 1], vec![1]], 0).is_err());
        assert!(MultiplicationTable::new(vec![], 0).is_err());
        assert!(MultiplicationTable::new(vec![vec![0]], 1).is_err());
        assert!(MultiplicationTable::parse("0 1\n1 x\n").is_err());
    }

    #[test]
    fn closure_violation_is_reported() {
        let t = MultiplicationTable::cyclic(3).with_entry(2, 0, 7);
        let report = check(&t);
        assert_eq!(report.obligations[0].counterexample, Some(vec![2, 0]));
        assert_eq!(report.to_string().split("; ").next(), Some("failed"));
    }

    #[test]
    fn parse_and_term_round_trip() {
        let t = MultiplicationTable::parse("# C2\nidentity 0\n0 1\n1 0 # swap\n").unwrap();
        assert_eq!(t, MultiplicationTable::cyclic(2));
        assert_eq!(MultiplicationTable::from_term(&t.to_term()).unwrap(), t);
    }

    #[test]
    fn report_term_round_trip() {
        for t in [
            MultiplicationTable::cyclic(3),
            MultiplicationTable::cyclic(4).with_entry(1, 1, 3),
        ] {
            let report = check(&t);
            let term = report.to_term();
            term.validate().unwrap();
            assert_eq!(CertReport::from_term(&term).unwrap(), report);
        }
    }

    #[test]
    fn obligation_document_has_four_axioms() {
        let doc = obligations(&MultiplicationTable::cyclic(4));
        assert_eq!(doc.matches("(defthm").count(), 4);
        assert!(doc.contains("'((0 1 2 3) (1 2 3 0) (2 3 0 1) (3 0 1 2))"));
        assert!(doc.contains("'(0 3 2 1)"));
        assert_eq!(doc, obligations(&MultiplicationTable::cyclic(4)));
    }

    proptest! {
        #[test]
        fn mutations_certify_or_carry_valid_counterexamples(
            n in 1usize..=8, a in 0usize..8, b in 0usize..8, v in -1i64..9
        ) {
            let (a, b) = (a % n, b % n);
            let t = MultiplicationTable::cyclic(n).with_entry(a, b, v);
            let report = check(&t);
            for o in &report.obligations {
                if let Some(cx) = &o.counterexample {
                    prop_assert!(o.axiom.violated_by(&t, cx));
                }
                prop_assert_eq!(o.holds, o.counterexample.is_none());
            }
            prop_assert_eq!(report.is_certified(), report.obligations.iter().all(|o| o.holds));
        }
    }
}
