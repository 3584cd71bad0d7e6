use std::sync::Arc;

use super::{
    Derivation, Kernel, KernelAnswer, KernelError, Question, QuestionKind, SubQuery, Value,
};
use crate::certifier::{self, MultiplicationTable};
use crate::grouphom::{self, GroupExpr};
use crate::hes::{HesError, OracleError, RuleBase};
use crate::simplicial::{self, SpaceExpr};
use crate::snf::FgAbelianGroup;
use crate::term::Term;

fn expect_kind(q: &Question, kind: QuestionKind) -> Result<(), KernelError> {
    if q.kind == kind {
        Ok(())
    } else {
        Err(KernelError::Failed(format!(
            "cannot answer {} questions",
            q.kind
        )))
    }
}

fn failed(e: impl std::fmt::Display) -> KernelError {
    KernelError::Failed(e.to_string())
}

/// Homology of finite simplicial models.
pub struct SimplicialKernel;

impl Kernel for SimplicialKernel {
    fn answer(&self, q: &Question, _: &mut dyn SubQuery) -> Result<KernelAnswer, KernelError> {
        expect_kind(q, QuestionKind::Homology)?;
        let space = SpaceExpr::from_term(&q.subject).map_err(failed)?;
        let h = simplicial::homology(&space, q.degree).map_err(failed)?;
        Ok(KernelAnswer::value(Value::Group(h)))
    }
}

/// Homology of finite abelian groups, and so of their K(G,1) spaces.
pub struct GroupHomKernel;

impl Kernel for GroupHomKernel {
    fn answer(&self, q: &Question, _: &mut dyn SubQuery) -> Result<KernelAnswer, KernelError> {
        expect_kind(q, QuestionKind::Homology)?;
        let group = match q.subject.args() {
            [g, _] if q.subject.is("algtop1", "em_space") => g,
            _ => &q.subject,
        };
        let g = GroupExpr::from_term(group).map_err(failed)?;
        let h = grouphom::group_homology(&g, q.degree).map_err(failed)?;
        Ok(KernelAnswer::value(Value::Group(h)))
    }
}

/// Homotopy groups by forward chaining; asks for homology through the broker.
pub struct HesKernel {
    rules: Arc<RuleBase>,
}

impl HesKernel {
    pub fn new(rules: Arc<RuleBase>) -> Self {
        HesKernel { rules }
    }
}

impl Kernel for HesKernel {
    fn answer(&self, q: &Question, sub: &mut dyn SubQuery) -> Result<KernelAnswer, KernelError> {
        expect_kind(q, QuestionKind::Homotopy)?;
        let mut oracle =
            |subject: &Term, n: usize| -> Result<Option<FgAbelianGroup>, OracleError> {
                match sub.ask(Question::homology(subject.clone(), n))?.value {
                    Value::Group(g) => Ok(Some(g)),
                    Value::Unknown => Ok(None),
                    Value::Certificate(_) => {
                        Err("homology question answered with a certificate".into())
                    }
                }
            };
        match self.rules.infer(&q.subject, q.degree, &[], &mut oracle) {
            Ok(inf) => Ok(KernelAnswer {
                value: inf.value.map_or(Value::Unknown, Value::Group),
                derivation: Some(Derivation {
                    trace: inf.trace,
                    initial_facts: inf.initial_facts,
                }),
            }),
            Err(HesError::Oracle { source, .. }) => match source.downcast::<super::BrokerError>() {
                Ok(b) => Err(KernelError::Broker(*b)),
                Err(other) => Err(failed(other)),
            },
            Err(e) => Err(failed(e)),
        }
    }
}

/// Checks multiplication tables against the group axioms.
pub struct CertifierKernel;

impl Kernel for CertifierKernel {
    fn answer(&self, q: &Question, _: &mut dyn SubQuery) -> Result<KernelAnswer, KernelError> {
        expect_kind(q, QuestionKind::Certify)?;
        let table = MultiplicationTable::from_term(&q.subject).map_err(failed)?;
        Ok(KernelAnswer::value(Value::Certificate(certifier::check(
            &table,
        ))))
    }
}
