//! Exact integer linear algebra: Smith normal form and finitely generated
//! abelian groups.
//!
//! Matrices are stored sparsely (sorted `(column, value)` runs per row) since
//! simplicial boundary matrices have a handful of `±1` entries per column.
//! All arithmetic is arbitrary precision.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, Zero};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SnfError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid complex: {0}")]
    InvalidComplex(String),
    #[error("ragged matrix: row {row} has {got} entries, expected {expected}")]
    Ragged {
        row: usize,
        got: usize,
        expected: usize,
    },
}

/// Integer matrix with sparse row-major storage. Zero entries are never stored.
#[derive(Clone, PartialEq, Eq)]
pub struct IntMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Vec<(usize, BigInt)>>,
}

impl IntMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        IntMatrix {
            rows,
            cols,
            data: vec![Vec::new(); rows],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i].push((i, BigInt::one()));
        }
        m
    }

    /// Builds a matrix from dense rows; every row must have the same length.
    pub fn from_rows<T: Into<BigInt> + Clone>(rows: &[Vec<T>]) -> Result<Self, SnfError> {
        let cols = rows.first().map_or(0, Vec::len);
        Self::from_rows_with_cols(rows, cols)
    }

    pub fn from_rows_with_cols<T: Into<BigInt> + Clone>(
        rows: &[Vec<T>],
        cols: usize,
    ) -> Result<Self, SnfError> {
        let mut m = Self::zeros(rows.len(), cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(SnfError::Ragged {
                    row: i,
                    got: row.len(),
                    expected: cols,
                });
            }
            m.data[i] = row
                .iter()
                .enumerate()
                .map(|(j, v)| (j, v.clone().into()))
                .filter(|(_, v)| !v.is_zero())
                .collect();
        }
        Ok(m)
    }

    /// Sums duplicate coordinates. Panics if a coordinate is out of range.
    pub fn from_entries(
        rows: usize,
        cols: usize,
        entries: impl IntoIterator<Item = (usize, usize, BigInt)>,
    ) -> Self {
        let mut acc: Vec<BTreeMap<usize, BigInt>> = vec![BTreeMap::new(); rows];
        for (i, j, v) in entries {
            assert!(
                i < rows && j < cols,
                "entry ({i},{j}) outside {rows}x{cols}"
            );
            *acc[i].entry(j).or_default() += v;
        }
        IntMatrix {
            rows,
            cols,
            data: acc
                .into_iter()
                .map(|r| r.into_iter().filter(|(_, v)| !v.is_zero()).collect())
                .collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.data.iter().map(Vec::len).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(Vec::is_empty)
    }

    pub fn row(&self, i: usize) -> &[(usize, BigInt)] {
        &self.data[i]
    }

    pub fn get(&self, i: usize, j: usize) -> BigInt {
        assert!(i < self.rows && j < self.cols);
        match self.data[i].binary_search_by_key(&j, |(c, _)| *c) {
            Ok(pos) => self.data[i][pos].1.clone(),
            Err(_) => BigInt::zero(),
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<BigInt>> {
        let mut out = vec![vec![BigInt::zero(); self.cols]; self.rows];
        for (i, row) in self.data.iter().enumerate() {
            for (j, v) in row {
                out[i][*j] = v.clone();
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let mut data = vec![Vec::new(); self.cols];
        for (i, row) in self.data.iter().enumerate() {
            for (j, v) in row {
                data[*j].push((i, v.clone()));
            }
        }
        IntMatrix {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }

    pub fn mul(&self, other: &IntMatrix) -> Result<IntMatrix, SnfError> {
        if self.cols != other.rows {
            return Err(SnfError::DimensionMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut data = Vec::with_capacity(self.rows);
        for row in &self.data {
            let mut acc: BTreeMap<usize, BigInt> = BTreeMap::new();
            for (k, a) in row {
                for (j, b) in &other.data[*k] {
                    *acc.entry(*j).or_default() += a * b;
                }
            }
            data.push(acc.into_iter().filter(|(_, v)| !v.is_zero()).collect());
        }
        Ok(IntMatrix {
            rows: self.rows,
            cols: other.cols,
            data,
        })
    }
}

impl fmt::Debug for IntMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "IntMatrix({}x{}) ", self.rows, self.cols)?;
        if self.rows * self.cols <= 64 {
            f.debug_list().entries(self.to_dense()).finish()
        } else {
            write!(f, "[{} nonzeros]", self.nnz())
        }
    }
}

/// Working copy for elimination: rows as ordered maps plus a column index.
struct Reducer {
    rows: Vec<BTreeMap<usize, BigInt>>,
    col_rows: Vec<BTreeSet<usize>>,
}

impl Reducer {
    fn new(m: &IntMatrix) -> Self {
        let mut col_rows = vec![BTreeSet::new(); m.cols];
        let rows = m
            .data
            .iter()
            .enumerate()
            .map(|(i, row)| {
                for (j, _) in row {
                    col_rows[*j].insert(i);
                }
                row.iter().cloned().collect()
            })
            .collect();
        Reducer { rows, col_rows }
    }

    /// Nonzero entry of least absolute value; stops early on a unit.
    fn smallest_entry(&self) -> Option<(usize, usize)> {
        let mut best: Option<(usize, usize, &BigInt)> = None;
        for (i, row) in self.rows.iter().enumerate() {
            for (j, v) in row {
                if best.is_none_or(|(_, _, b)| v.magnitude() < b.magnitude()) {
                    best = Some((i, *j, v));
                    if v.magnitude().is_one() {
                        return Some((i, *j));
                    }
                }
            }
        }
        best.map(|(i, j, _)| (i, j))
    }

    fn entry(&self, i: usize, j: usize) -> &BigInt {
        &self.rows[i][&j]
    }

    fn set(&mut self, i: usize, j: usize, v: BigInt) {
        if v.is_zero() {
            self.rows[i].remove(&j);
            self.col_rows[j].remove(&i);
        } else {
            self.rows[i].insert(j, v);
            self.col_rows[j].insert(i);
        }
    }

    /// row[target] -= factor * row[source]
    fn row_axpy(&mut self, target: usize, source: usize, factor: &BigInt) {
        let src: Vec<(usize, BigInt)> = self.rows[source]
            .iter()
            .map(|(j, v)| (*j, v.clone()))
            .collect();
        for (j, v) in src {
            let cur = self.rows[target].get(&j).cloned().unwrap_or_default();
            self.set(target, j, cur - factor * v);
        }
    }

    /// col[target] -= factor * col[source]
    fn col_axpy(&mut self, target: usize, source: usize, factor: &BigInt) {
        let src: Vec<(usize, BigInt)> = self.col_rows[source]
            .iter()
            .map(|i| (*i, self.rows[*i][&source].clone()))
            .collect();
        for (i, v) in src {
            let cur = self.rows[i].get(&target).cloned().unwrap_or_default();
            self.set(i, target, cur - factor * v);
        }
    }

    fn clear(&mut self, p: usize, q: usize) {
        for (j, _) in std::mem::take(&mut self.rows[p]) {
            self.col_rows[j].remove(&p);
        }
        for i in std::mem::take(&mut self.col_rows[q]) {
            self.rows[i].remove(&q);
        }
    }

    /// Diagonalizes the pivot's row and column; returns the final pivot value.
    fn eliminate(&mut self, mut p: usize, mut q: usize) -> BigInt {
        'restart: loop {
            let pivot = self.entry(p, q).clone();
            let others: Vec<usize> = self.col_rows[q]
                .iter()
                .copied()
                .filter(|&i| i != p)
                .collect();
            let mut smaller: Option<(usize, BigInt)> = None;
            for i in others {
                let quotient = self.entry(i, q).div_floor(&pivot);
                self.row_axpy(i, p, &quotient);
                if let Some(r) = self.rows[i].get(&q) {
                    if smaller
                        .as_ref()
                        .is_none_or(|(_, s)| r.magnitude() < s.magnitude())
                    {
                        smaller = Some((i, r.clone()));
                    }
                }
            }
            if let Some((i, _)) = smaller {
                p = i;
                continue 'restart;
            }
            // Column q now holds only the pivot, so column operations touch row p alone.
            let others: Vec<usize> = self.rows[p].keys().copied().filter(|&j| j != q).collect();
            let mut smaller: Option<(usize, BigInt)> = None;
            for j in others {
                let quotient = self.entry(p, j).div_floor(&pivot);
                self.col_axpy(j, q, &quotient);
                if let Some(r) = self.rows[p].get(&j) {
                    if smaller
                        .as_ref()
                        .is_none_or(|(_, s)| r.magnitude() < s.magnitude())
                    {
                        smaller = Some((j, r.clone()));
                    }
                }
            }
            if let Some((j, _)) = smaller {
                q = j;
                continue 'restart;
            }
            self.clear(p, q);
            return pivot.abs();
        }
    }
}

/// Invariant factors `d1 | d2 | ... | dr` of `m`, where `r` is its rank.
/// Factors equal to 1 are kept.
pub fn snf(m: &IntMatrix) -> Vec<BigInt> {
    let mut reducer = Reducer::new(m);
    let mut diagonal = Vec::new();
    while let Some((p, q)) = reducer.smallest_entry() {
        diagonal.push(reducer.eliminate(p, q));
    }
    divisibility_chain(diagonal)
}

pub fn rank(m: &IntMatrix) -> usize {
    snf(m).len()
}

/// Turns any list of positive integers into the equivalent invariant-factor
/// chain via `diag(a, b) ~ diag(gcd, lcm)`.
fn divisibility_chain(values: Vec<BigInt>) -> Vec<BigInt> {
    let (mut ones, mut rest): (Vec<BigInt>, Vec<BigInt>) =
        values.into_iter().partition(|v| v.is_one());
    rest.sort();
    let n = rest.len();
    for i in 0..n {
        for j in i + 1..n {
            if (&rest[j] % &rest[i]).is_zero() {
                continue;
            }
            let g = rest[i].gcd(&rest[j]);
            let l = rest[i].lcm(&rest[j]);
            rest[i] = g;
            rest[j] = l;
        }
    }
    // gcd steps can expose new units
    let (more_ones, chain): (Vec<BigInt>, Vec<BigInt>) = rest.into_iter().partition(|v| v.is_one());
    ones.extend(more_ones);
    ones.extend(chain);
    ones
}

/// Finitely generated abelian group `Z^rank + Z/t1 + ... + Z/tk` with
/// `t1 | t2 | ... | tk` and every `ti >= 2`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct FgAbelianGroup {
    rank: usize,
    torsion: Vec<BigInt>,
}

impl FgAbelianGroup {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn integers() -> Self {
        Self::free(1)
    }

    pub fn free(rank: usize) -> Self {
        FgAbelianGroup {
            rank,
            torsion: Vec::new(),
        }
    }

    /// `Z/m`; `m = 0` gives `Z` and `m = 1` the trivial group.
    pub fn cyclic(m: impl Into<BigInt>) -> Self {
        let m = m.into().abs();
        if m.is_zero() {
            Self::integers()
        } else {
            Self::new(0, [m])
        }
    }

    /// Normalizes an arbitrary list of cyclic orders; orders of 0 count as free
    /// summands, orders of 1 vanish.
    pub fn new(rank: usize, cyclic_orders: impl IntoIterator<Item = BigInt>) -> Self {
        let mut rank = rank;
        let mut finite = Vec::new();
        for d in cyclic_orders {
            let d = d.abs();
            if d.is_zero() {
                rank += 1;
            } else if !d.is_one() {
                finite.push(d);
            }
        }
        let torsion = divisibility_chain(finite)
            .into_iter()
            .filter(|d| !d.is_one())
            .collect();
        FgAbelianGroup { rank, torsion }
    }

    /// Accepts only lists already in invariant-factor form.
    pub fn from_invariants(rank: usize, torsion: Vec<BigInt>) -> Option<Self> {
        let ok = torsion.iter().all(|t| *t >= BigInt::from(2))
            && torsion.windows(2).all(|w| (&w[1] % &w[0]).is_zero());
        ok.then_some(FgAbelianGroup { rank, torsion })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn torsion(&self) -> &[BigInt] {
        &self.torsion
    }

    pub fn is_trivial(&self) -> bool {
        self.rank == 0 && self.torsion.is_empty()
    }

    pub fn direct_sum(&self, other: &Self) -> Self {
        Self::new(
            self.rank + other.rank,
            self.torsion.iter().chain(&other.torsion).cloned(),
        )
    }

    pub fn tensor(&self, other: &Self) -> Self {
        let mut orders = Vec::new();
        for _ in 0..self.rank {
            orders.extend(other.torsion.iter().cloned());
        }
        for _ in 0..other.rank {
            orders.extend(self.torsion.iter().cloned());
        }
        for a in &self.torsion {
            for b in &other.torsion {
                orders.push(a.gcd(b));
            }
        }
        Self::new(self.rank * other.rank, orders)
    }

    pub fn tor(&self, other: &Self) -> Self {
        let orders = self
            .torsion
            .iter()
            .flat_map(|a| other.torsion.iter().map(move |b| a.gcd(b)));
        Self::new(0, orders.collect::<Vec<_>>())
    }
}

impl fmt::Display for FgAbelianGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        match self.rank {
            0 => {}
            1 => parts.push("Z".to_string()),
            r => parts.push(format!("Z^{r}")),
        }
        parts.extend(self.torsion.iter().map(|t| format!("Z/{t}")));
        if parts.is_empty() {
            f.write_str("0")
        } else {
            f.write_str(&parts.join(" + "))
        }
    }
}

/// `H_k = ker d_k / im d_{k+1}` where `d_k: C_k -> C_{k-1}` and
/// `d_k1: C_{k+1} -> C_k`; `n_k` is the rank of `C_k`.
pub fn homology_from_boundaries(
    n_k: usize,
    d_k: &IntMatrix,
    d_k1: &IntMatrix,
) -> Result<FgAbelianGroup, SnfError> {
    if d_k.cols() != n_k {
        return Err(SnfError::DimensionMismatch(format!(
            "outgoing boundary has {} columns, chain group has rank {n_k}",
            d_k.cols()
        )));
    }
    if d_k1.rows() != n_k {
        return Err(SnfError::DimensionMismatch(format!(
            "incoming boundary has {} rows, chain group has rank {n_k}",
            d_k1.rows()
        )));
    }
    if !d_k.mul(d_k1)?.is_zero() {
        return Err(SnfError::InvalidComplex(
            "composite of consecutive boundaries is nonzero".into(),
        ));
    }
    let outgoing_rank = rank(d_k);
    let incoming = snf(d_k1);
    let free = n_k - outgoing_rank - incoming.len();
    Ok(FgAbelianGroup::new(
        free,
        incoming.into_iter().filter(|d| !d.is_one()),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;
    use proptest::prelude::*;

    fn big(v: &[i64]) -> Vec<BigInt> {
        v.iter().map(|&x| BigInt::from(x)).collect()
    }

    fn mat(rows: &[&[i64]]) -> IntMatrix {
        IntMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn zero_and_identity() {
        assert!(snf(&IntMatrix::zeros(3, 3)).is_empty());
        assert_eq!(snf(&IntMatrix::identity(3)), big(&[1, 1, 1]));
        assert!(snf(&IntMatrix::zeros(0, 4)).is_empty());
    }

    #[test]
    fn small_example_matches_determinantal_divisors() {
        let m = mat(&[&[2, 4], &[6, 8]]);
        let expected = oracle::invariant_factors_by_minors(&m.to_dense());
        assert_eq!(expected, big(&[2, 4]));
        assert_eq!(snf(&m), expected);
    }

    #[test]
    fn non_unit_pivots_need_gcd_steps() {
        // diag(2, 3) ~ diag(1, 6)
        assert_eq!(snf(&mat(&[&[2, 0], &[0, 3]])), big(&[1, 6]));
        assert_eq!(snf(&mat(&[&[4, 6], &[6, 4]])), big(&[2, 10]));
        assert_eq!(snf(&mat(&[&[-5]])), big(&[5]));
    }

    #[test]
    fn ragged_rows_rejected() {
        let err = IntMatrix::from_rows(&[vec![1, 2], vec![3]]).unwrap_err();
        assert!(matches!(err, SnfError::Ragged { row: 1, .. }));
    }

    #[test]
    fn group_normalization_and_display() {
        let g = FgAbelianGroup::new(2, big(&[2, 3, 1, 4]));
        // Z/2 + Z/3 + Z/4 = Z/2 + Z/12
        assert_eq!(g.torsion(), big(&[2, 12]).as_slice());
        assert_eq!(g.to_string(), "Z^2 + Z/2 + Z/12");
        assert_eq!(FgAbelianGroup::zero().to_string(), "0");
        assert_eq!(FgAbelianGroup::integers().to_string(), "Z");
        assert_eq!(FgAbelianGroup::cyclic(5).to_string(), "Z/5");
        assert_eq!(FgAbelianGroup::cyclic(1), FgAbelianGroup::zero());
        assert!(FgAbelianGroup::from_invariants(0, big(&[4, 2])).is_none());
    }

    #[test]
    fn tensor_examples() {
        let z = FgAbelianGroup::integers();
        let x = FgAbelianGroup::new(1, big(&[2, 6]));
        assert_eq!(z.tensor(&x), x);
        let z4 = FgAbelianGroup::cyclic(4);
        let z6 = FgAbelianGroup::cyclic(6);
        assert_eq!(z4.tensor(&z6), FgAbelianGroup::cyclic(2));
        assert_eq!(
            oracle::tensor_by_presentation(&z4, &z6),
            FgAbelianGroup::cyclic(2)
        );
        let z2 = FgAbelianGroup::cyclic(2);
        let sq = FgAbelianGroup::free(2).tensor(&z2);
        assert_eq!(sq, FgAbelianGroup::new(0, big(&[2, 2])));
        assert_eq!(
            sq,
            oracle::tensor_by_presentation(&FgAbelianGroup::free(2), &z2)
        );
    }

    #[test]
    fn tor_examples() {
        let z = FgAbelianGroup::integers();
        let z2 = FgAbelianGroup::cyclic(2);
        assert!(z.tor(&FgAbelianGroup::cyclic(5)).is_trivial());
        assert_eq!(z2.tor(&z2), z2);
        let a = FgAbelianGroup::new(1, big(&[4]));
        assert_eq!(a.tor(&FgAbelianGroup::cyclic(6)), z2);
    }

    #[test]
    fn circle_homology() {
        // vertices 0,1,2; edges 01, 02, 12
        let d1 = mat(&[&[-1, -1, 0], &[1, 0, -1], &[0, 1, 1]]);
        let h1 = homology_from_boundaries(3, &d1, &IntMatrix::zeros(3, 0)).unwrap();
        assert_eq!(h1, FgAbelianGroup::integers());
        let h0 = homology_from_boundaries(3, &IntMatrix::zeros(0, 3), &d1).unwrap();
        assert_eq!(h0, FgAbelianGroup::integers());
        assert_eq!(oracle::rational_rank(&d1.to_dense()), 2);
    }

    #[test]
    fn homology_rejects_bad_shapes_and_complexes() {
        let d1 = mat(&[&[-1], &[1]]);
        assert!(matches!(
            homology_from_boundaries(2, &d1, &IntMatrix::zeros(1, 0)),
            Err(SnfError::DimensionMismatch(_))
        ));
        let bad = mat(&[&[1], &[1]]);
        assert!(matches!(
            homology_from_boundaries(2, &IntMatrix::identity(2), &bad),
            Err(SnfError::InvalidComplex(_))
        ));
    }

    fn small_matrix() -> impl Strategy<Value = Vec<Vec<i64>>> {
        (1usize..6, 1usize..6).prop_flat_map(|(r, c)| {
            proptest::collection::vec(proptest::collection::vec(-6i64..=6, c), r)
        })
    }

    proptest! {
        #[test]
        fn agrees_with_determinantal_divisors(rows in small_matrix()) {
            let m = IntMatrix::from_rows(&rows).unwrap();
            prop_assert_eq!(snf(&m), oracle::invariant_factors_by_minors(&m.to_dense()));
        }

        #[test]
        fn transpose_invariant(rows in small_matrix()) {
            let m = IntMatrix::from_rows(&rows).unwrap();
            prop_assert_eq!(snf(&m), snf(&m.transpose()));
        }

        #[test]
        fn sparse_product_matches_dense(a in small_matrix(), seed in 0u64..1000) {
            let m = IntMatrix::from_rows(&a).unwrap();
            let other = oracle::random_matrix(seed, m.cols(), 3, 4);
            let fast = m.mul(&other).unwrap().to_dense();
            prop_assert_eq!(fast, oracle::dense_product(&m.to_dense(), &other.to_dense()));
        }
    }
}
