//! Compact human syntax for spaces and groups, shared by the CLI and the
//! HTTP front door:
//!
//! ```text
//! S(n)  sphere          D(n)  simplex        RP2   projective plane
//! C(m)  cyclic group    K(G,n) Eilenberg-MacLane space
//! A*B   cartesian product of spaces, direct product of groups
//! ```
//!
//! `*` is left-associative for spaces; a run of group factors becomes one
//! n-ary direct product. Parentheses group explicitly.

use num_bigint::BigInt;
use thiserror::Error;

use crate::term::{canonical_key, Term};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("parse error at offset {offset}: {message}")]
pub struct ParseError {
    pub offset: usize,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Sort {
    Space,
    Group,
}

pub fn parse(input: &str) -> Result<Term, ParseError> {
    let mut p = ExprParser {
        src: input.as_bytes(),
        pos: 0,
    };
    let (term, _) = p.product()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(p.error("trailing input"));
    }
    Ok(term)
}

struct ExprParser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl ExprParser<'_> {
    fn error(&self, message: impl Into<String>) -> ParseError {
        ParseError {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn eat(&mut self, c: u8) -> bool {
        self.skip_ws();
        if self.src.get(self.pos) == Some(&c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> Result<(), ParseError> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.error(format!("expected '{}'", c as char)))
        }
    }

    fn integer(&mut self) -> Result<BigInt, ParseError> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.error("expected a non-negative integer"));
        }
        let digits = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii digits");
        Ok(digits.parse().expect("digits parse"))
    }

    fn product(&mut self) -> Result<(Term, Sort), ParseError> {
        let start = self.pos;
        let (first, sort) = self.factor()?;
        let mut factors = vec![first];
        while self.eat(b'*') {
            let (next, next_sort) = self.factor()?;
            if next_sort != sort {
                return Err(ParseError {
                    offset: start,
                    message: "cannot multiply a space with a group".into(),
                });
            }
            factors.push(next);
        }
        if factors.len() == 1 {
            return Ok((factors.pop().unwrap(), sort));
        }
        let term = match sort {
            Sort::Group => Term::apply("grp1", "direct_product", factors),
            Sort::Space => {
                let mut iter = factors.into_iter();
                let first = iter.next().unwrap();
                iter.fold(first, |acc, f| {
                    Term::apply("algtop1", "cartesian_product", vec![acc, f])
                })
            }
        };
        Ok((term, sort))
    }

    fn factor(&mut self) -> Result<(Term, Sort), ParseError> {
        self.skip_ws();
        if self.eat(b'(') {
            let inner = self.product()?;
            self.expect(b')')?;
            return Ok(inner);
        }
        let rest = &self.src[self.pos..];
        if rest.starts_with(b"RP2") {
            self.pos += 3;
            return Ok((Term::sym("algtop1", "rp2"), Sort::Space));
        }
        let Some(&tag) = rest.first() else {
            return Err(self.error("unexpected end of input"));
        };
        if !matches!(tag, b'S' | b'D' | b'C' | b'K') {
            return Err(self.error(format!("unknown constructor '{}'", tag as char)));
        }
        self.pos += 1;
        self.expect(b'(')?;
        let result = match tag {
            b'S' | b'D' | b'C' => {
                let n = self.integer()?;
                match tag {
                    b'S' => (
                        Term::apply("algtop1", "sphere", vec![Term::Integer(n)]),
                        Sort::Space,
                    ),
                    b'D' => (
                        Term::apply("algtop1", "simplex", vec![Term::Integer(n)]),
                        Sort::Space,
                    ),
                    _ => (
                        Term::apply("grp1", "cyclic_group", vec![Term::Integer(n)]),
                        Sort::Group,
                    ),
                }
            }
            b'K' => {
                let group_at = self.pos;
                let (group, sort) = self.product()?;
                if sort != Sort::Group {
                    return Err(ParseError {
                        offset: group_at,
                        message: "K(G,n) needs a group".into(),
                    });
                }
                self.expect(b',')?;
                let n = self.integer()?;
                (
                    Term::apply("algtop1", "em_space", vec![group, Term::Integer(n)]),
                    Sort::Space,
                )
            }
            _ => unreachable!("constructor tag checked above"),
        };
        self.expect(b')')?;
        Ok(result)
    }
}

/// Renders a space or group term in compact syntax. Terms outside the
/// grammar fall back to their canonical key.
pub fn render(t: &Term) -> String {
    let int_arg = |i: usize| t.args().get(i).map(leaf_text).unwrap_or_default();
    if t.is("algtop1", "sphere") && t.args().len() == 1 {
        format!("S({})", int_arg(0))
    } else if t.is("algtop1", "simplex") && t.args().len() == 1 {
        format!("D({})", int_arg(0))
    } else if t.is("grp1", "cyclic_group") && t.args().len() == 1 {
        format!("C({})", int_arg(0))
    } else if t.is("algtop1", "rp2") && t.args().is_empty() {
        "RP2".to_string()
    } else if t.is("algtop1", "em_space") && t.args().len() == 2 {
        format!("K({},{})", render(&t.args()[0]), int_arg(1))
    } else if t.is("algtop1", "cartesian_product") && t.args().len() == 2 {
        let right = &t.args()[1];
        let right = if right.is("algtop1", "cartesian_product") {
            format!("({})", render(right))
        } else {
            render(right)
        };
        format!("{}*{}", render(&t.args()[0]), right)
    } else if t.is("grp1", "direct_product") {
        t.args()
            .iter()
            .map(|a| {
                if a.is("grp1", "direct_product") {
                    format!("({})", render(a))
                } else {
                    render(a)
                }
            })
            .collect::<Vec<_>>()
            .join("*")
    } else {
        canonical_key(t).unwrap_or_else(|_| format!("{t:?}"))
    }
}

fn leaf_text(t: &Term) -> String {
    match t {
        Term::Integer(v) => v.to_string(),
        other => render(other),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_constructors() {
        assert_eq!(
            parse("S(4)").unwrap(),
            Term::apply("algtop1", "sphere", vec![Term::int(4)])
        );
        assert_eq!(parse(" RP2 ").unwrap(), Term::sym("algtop1", "rp2"));
        let k = parse("K(C(5),1)").unwrap();
        assert_eq!(
            k,
            Term::apply(
                "algtop1",
                "em_space",
                vec![
                    Term::apply("grp1", "cyclic_group", vec![Term::int(5)]),
                    Term::int(1)
                ]
            )
        );
    }

    #[test]
    fn products_by_sort() {
        let p = parse("D(4)*D(5)").unwrap();
        assert!(p.is("algtop1", "cartesian_product"));
        let triple = parse("S(1)*S(1)*S(1)").unwrap();
        assert!(triple.args()[0].is("algtop1", "cartesian_product"));
        let g = parse("C(2)*C(2)*C(3)").unwrap();
        assert!(g.is("grp1", "direct_product"));
        assert_eq!(g.args().len(), 3);
        assert!(parse("S(1)*C(2)").is_err());
        assert!(parse("K(S(1),1)").is_err());
    }

    #[test]
    fn errors_carry_offsets() {
        let err = parse("S(4").unwrap_err();
        assert_eq!(err.offset, 3);
        assert!(parse("X(1)").is_err());
        assert!(parse("S(-1)").is_err());
        assert!(parse("").is_err());
        assert!(parse("S(1) S(2)").is_err());
    }

    #[test]
    fn render_round_trips() {
        for src in [
            "S(4)",
            "D(4)*D(5)",
            "K(C(5),1)",
            "RP2*S(2)",
            "S(1)*(S(1)*S(2))",
            "C(2)*(C(3)*C(4))*C(5)",
            "K(C(2)*C(2),1)",
        ] {
            let t = parse(src).unwrap();
            assert_eq!(render(&t), src);
            assert_eq!(parse(&render(&t)).unwrap(), t);
        }
    }
}
