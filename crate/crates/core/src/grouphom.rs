//! Integral homology of finite cyclic groups and their direct products.
//!
//! Cyclic groups go through the chain complex of the periodic resolution
//! tensored down to `Z`; products are assembled with the Künneth formula.

use num_bigint::BigInt;
use thiserror::Error;

use crate::simplicial::ChainComplex;
use crate::snf::{FgAbelianGroup, IntMatrix, SnfError};
use crate::term::Term;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GroupHomError {
    #[error("not a group expression: {0}")]
    InvalidGroup(String),
    #[error("periodic resolution needs a group of order at least 2, got {0}")]
    TrivialOrder(u64),
    #[error(transparent)]
    Snf(#[from] SnfError),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum GroupExpr {
    Cyclic(u64),
    DirectProduct(Vec<GroupExpr>),
}

impl GroupExpr {
    pub fn from_term(t: &Term) -> Result<Self, GroupHomError> {
        let invalid = || GroupHomError::InvalidGroup(crate::expr::render(t));
        if t.is("grp1", "cyclic_group") {
            let m = t
                .args()
                .first()
                .and_then(Term::as_integer)
                .and_then(|v| u64::try_from(v).ok())
                .filter(|&m| m >= 1)
                .ok_or_else(invalid)?;
            Ok(GroupExpr::Cyclic(m))
        } else if t.is("grp1", "direct_product") && t.args().len() >= 2 {
            t.args()
                .iter()
                .map(GroupExpr::from_term)
                .collect::<Result<_, _>>()
                .map(GroupExpr::DirectProduct)
        } else {
            Err(invalid())
        }
    }

    pub fn to_term(&self) -> Term {
        match self {
            GroupExpr::Cyclic(m) => Term::apply("grp1", "cyclic_group", vec![Term::int(*m)]),
            GroupExpr::DirectProduct(factors) => Term::apply(
                "grp1",
                "direct_product",
                factors.iter().map(GroupExpr::to_term).collect(),
            ),
        }
    }

    /// The group itself, which is abelian for every expression in this family.
    pub fn as_abelian(&self) -> FgAbelianGroup {
        match self {
            GroupExpr::Cyclic(m) => FgAbelianGroup::cyclic(*m),
            GroupExpr::DirectProduct(factors) => {
                factors.iter().fold(FgAbelianGroup::zero(), |acc, f| {
                    acc.direct_sum(&f.as_abelian())
                })
            }
        }
    }

    pub fn is_trivial(&self) -> bool {
        self.as_abelian().is_trivial()
    }
}

/// The periodic resolution of `C_m` tensored with `Z`, through degree `top + 1`:
/// one generator per degree, `d_k = 0` for odd `k` and `d_k = m` for even `k`.
pub fn periodic_complex(m: u64, top: usize) -> Result<ChainComplex, GroupHomError> {
    if m < 2 {
        return Err(GroupHomError::TrivialOrder(m));
    }
    let boundaries = (1..=top + 1)
        .map(|k| {
            let entry = if k % 2 == 0 {
                BigInt::from(m)
            } else {
                BigInt::from(0)
            };
            IntMatrix::from_rows(&[vec![entry]]).expect("1x1 matrix")
        })
        .collect();
    Ok(ChainComplex::new(vec![1; top + 2], boundaries)?)
}

pub fn group_homology(g: &GroupExpr, n: usize) -> Result<FgAbelianGroup, GroupHomError> {
    Ok(homology_through(g, n)?.swap_remove(n))
}

/// `H_0(G) .. H_top(G)`.
pub fn homology_through(g: &GroupExpr, top: usize) -> Result<Vec<FgAbelianGroup>, GroupHomError> {
    match g {
        GroupExpr::Cyclic(1) => Ok((0..=top)
            .map(|k| {
                if k == 0 {
                    FgAbelianGroup::integers()
                } else {
                    FgAbelianGroup::zero()
                }
            })
            .collect()),
        GroupExpr::Cyclic(m) => {
            let complex = periodic_complex(*m, top.max(1))?;
            (0..=top).map(|k| Ok(complex.homology(k)?)).collect()
        }
        GroupExpr::DirectProduct(factors) => {
            let mut iter = factors.iter();
            let first = iter
                .next()
                .ok_or_else(|| GroupHomError::InvalidGroup("empty direct product".into()))?;
            let mut acc = homology_through(first, top)?;
            for factor in iter {
                let next = homology_through(factor, top)?;
                acc = (0..=top).map(|n| kunneth(&acc, &next, n)).collect();
            }
            Ok(acc)
        }
    }
}

/// `H_n(G x H) = (+)_{i+j=n} H_i(G) (x) H_j(H)  (+)  (+)_{i+j=n-1} Tor(H_i(G), H_j(H))`.
pub fn kunneth(left: &[FgAbelianGroup], right: &[FgAbelianGroup], n: usize) -> FgAbelianGroup {
    let mut total = FgAbelianGroup::zero();
    for i in 0..=n {
        total = total.direct_sum(&left[i].tensor(&right[n - i]));
    }
    for i in 0..n {
        total = total.direct_sum(&left[i].tor(&right[n - 1 - i]));
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;
    use proptest::prelude::*;

    fn c(m: u64) -> GroupExpr {
        GroupExpr::Cyclic(m)
    }

    #[test]
    fn periodic_complex_pattern() {
        let cx = periodic_complex(5, 5).unwrap();
        let entries: Vec<BigInt> = (1..=6).map(|k| cx.boundary(k).get(0, 0)).collect();
        let expected: Vec<BigInt> = [0, 5, 0, 5, 0, 5]
            .iter()
            .map(|&v| BigInt::from(v))
            .collect();
        assert_eq!(entries, expected);
        let small = periodic_complex(2, 1).unwrap();
        assert_eq!(small.boundary(1).get(0, 0), BigInt::from(0));
        assert_eq!(small.boundary(2).get(0, 0), BigInt::from(2));
        assert_eq!(
            periodic_complex(1, 3).unwrap_err(),
            GroupHomError::TrivialOrder(1)
        );
    }

    #[test]
    fn cyclic_five_in_degree_five() {
        assert_eq!(group_homology(&c(5), 5).unwrap(), FgAbelianGroup::cyclic(5));
        assert_eq!(
            group_homology(&c(7), 0).unwrap(),
            FgAbelianGroup::integers()
        );
        assert_eq!(group_homology(&c(3), 2).unwrap(), FgAbelianGroup::zero());
        assert_eq!(
            group_homology(&c(1), 0).unwrap(),
            FgAbelianGroup::integers()
        );
        assert_eq!(group_homology(&c(1), 3).unwrap(), FgAbelianGroup::zero());
    }

    #[test]
    fn klein_four_first_homology() {
        let v4 = GroupExpr::DirectProduct(vec![c(2), c(2)]);
        assert_eq!(
            group_homology(&v4, 1).unwrap(),
            FgAbelianGroup::new(0, [BigInt::from(2), BigInt::from(2)])
        );
        // H_2(C2 x C2) = Tor(Z/2, Z/2) = Z/2
        assert_eq!(group_homology(&v4, 2).unwrap(), FgAbelianGroup::cyclic(2));
    }

    #[test]
    fn cyclic_periodicity_matches_closed_form() {
        for m in 2..=9u64 {
            for n in 0..=9 {
                assert_eq!(
                    group_homology(&c(m), n).unwrap(),
                    oracle::cyclic_group_homology(m, n),
                    "H_{n}(C_{m})"
                );
            }
        }
    }

    #[test]
    fn term_round_trip() {
        let g = GroupExpr::DirectProduct(vec![c(2), GroupExpr::DirectProduct(vec![c(3), c(4)])]);
        assert_eq!(GroupExpr::from_term(&g.to_term()).unwrap(), g);
        assert!(
            GroupExpr::from_term(&Term::apply("grp1", "cyclic_group", vec![Term::int(0)])).is_err()
        );
        assert!(
            GroupExpr::from_term(&Term::apply("algtop1", "sphere", vec![Term::int(1)])).is_err()
        );
    }

    fn small_group() -> impl Strategy<Value = GroupExpr> {
        let leaf = (1u64..7).prop_map(GroupExpr::Cyclic);
        leaf.prop_recursive(2, 6, 3, |inner| {
            proptest::collection::vec(inner, 2..=3).prop_map(GroupExpr::DirectProduct)
        })
    }

    proptest! {
        #[test]
        fn kunneth_is_symmetric(a in small_group(), b in small_group(), n in 0usize..=5) {
            let ab = GroupExpr::DirectProduct(vec![a.clone(), b.clone()]);
            let ba = GroupExpr::DirectProduct(vec![b, a]);
            prop_assert_eq!(group_homology(&ab, n).unwrap(), group_homology(&ba, n).unwrap());
        }

        #[test]
        fn degree_zero_is_integers(g in small_group()) {
            prop_assert_eq!(group_homology(&g, 0).unwrap(), FgAbelianGroup::integers());
        }

        #[test]
        fn first_homology_is_abelianization(g in small_group()) {
            prop_assert_eq!(group_homology(&g, 1).unwrap(), g.as_abelian());
        }
    }
}
