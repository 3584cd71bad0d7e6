//! Independent reference computations used by the test suites.
//!
//! Nothing here shares a code path with the production algorithms it is used
//! to check: invariant factors come from determinantal divisors, ranks and
//! determinants from Bareiss elimination over dense matrices.

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::snf::{self, FgAbelianGroup, IntMatrix};

pub type Dense = Vec<Vec<BigInt>>;

/// Bareiss fraction-free elimination. Returns (rank, determinant if square).
fn bareiss(m: &Dense) -> (usize, Option<BigInt>) {
    let rows = m.len();
    let cols = m.first().map_or(0, Vec::len);
    let mut a = m.clone();
    let mut prev = BigInt::one();
    let mut sign = BigInt::one();
    let mut r = 0;
    for c in 0..cols {
        if r == rows {
            break;
        }
        let Some(p) = (r..rows).find(|&i| !a[i][c].is_zero()) else {
            continue;
        };
        if p != r {
            a.swap(p, r);
            sign = -sign;
        }
        for i in r + 1..rows {
            for j in c + 1..cols {
                let v = &a[r][c] * &a[i][j] - &a[i][c] * &a[r][j];
                a[i][j] = v / &prev;
            }
            a[i][c] = BigInt::zero();
        }
        prev = a[r][c].clone();
        r += 1;
    }
    let det = (rows == cols).then(|| {
        if r < rows {
            BigInt::zero()
        } else if rows == 0 {
            BigInt::one()
        } else {
            sign * &a[rows - 1][cols - 1]
        }
    });
    (r, det)
}

pub fn rational_rank(m: &Dense) -> usize {
    bareiss(m).0
}

pub fn determinant(m: &Dense) -> BigInt {
    bareiss(m).1.expect("determinant of a non-square matrix")
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            go(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Invariant factors as quotients of determinantal divisors
/// `D_k = gcd of all k x k minors`.
pub fn invariant_factors_by_minors(m: &Dense) -> Vec<BigInt> {
    let rows = m.len();
    let cols = m.first().map_or(0, Vec::len);
    let mut factors = Vec::new();
    let mut prev = BigInt::one();
    for k in 1..=rows.min(cols) {
        let mut g = BigInt::zero();
        for rs in combinations(rows, k) {
            for cs in combinations(cols, k) {
                let minor: Dense = rs
                    .iter()
                    .map(|&i| cs.iter().map(|&j| m[i][j].clone()).collect())
                    .collect();
                g = g.gcd(&determinant(&minor));
            }
        }
        if g.is_zero() {
            break;
        }
        factors.push(&g / &prev);
        prev = g;
    }
    factors
}

pub fn dense_product(a: &Dense, b: &Dense) -> Dense {
    let n = b.first().map_or(0, Vec::len);
    a.iter()
        .map(|row| {
            (0..n)
                .map(|j| row.iter().zip(b).map(|(x, brow)| x * &brow[j]).sum())
                .collect()
        })
        .collect()
}

pub fn random_matrix(seed: u64, rows: usize, cols: usize, bound: i64) -> IntMatrix {
    let mut rng = StdRng::seed_from_u64(seed);
    let dense: Vec<Vec<i64>> = (0..rows)
        .map(|_| (0..cols).map(|_| rng.gen_range(-bound..=bound)).collect())
        .collect();
    IntMatrix::from_rows_with_cols(&dense, cols).unwrap()
}

/// Product of random elementary operations: a unimodular matrix.
pub fn random_unimodular(rng: &mut StdRng, n: usize, steps: usize) -> IntMatrix {
    let mut m: Dense = (0..n)
        .map(|i| (0..n).map(|j| BigInt::from((i == j) as i64)).collect())
        .collect();
    if n < 2 {
        if n == 1 && rng.gen_bool(0.5) {
            m[0][0] = -BigInt::one();
        }
        return IntMatrix::from_rows(&m).unwrap();
    }
    for _ in 0..steps {
        let i = rng.gen_range(0..n);
        let mut j = rng.gen_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        match rng.gen_range(0..3) {
            0 => m.swap(i, j),
            1 => m[i].iter_mut().for_each(|v| *v = -v.clone()),
            _ => {
                let f = BigInt::from(rng.gen_range(-2i64..=2));
                let src = m[j].clone();
                for (v, s) in m[i].iter_mut().zip(src) {
                    *v += &f * s;
                }
            }
        }
    }
    IntMatrix::from_rows(&m).unwrap()
}

/// Cyclic decomposition orders: 0 stands for a free summand.
fn cyclic_orders(g: &FgAbelianGroup) -> Vec<BigInt> {
    std::iter::repeat_n(BigInt::zero(), g.rank())
        .chain(g.torsion().iter().cloned())
        .collect()
}

/// Cokernel of an integer relation matrix on `generators` generators.
fn cokernel(generators: usize, relations: &IntMatrix) -> FgAbelianGroup {
    let factors = snf::snf(relations);
    FgAbelianGroup::new(
        generators - factors.len(),
        factors.into_iter().filter(|d| !d.is_one()),
    )
}

/// A (x) B from its presentation: generators e_i (x) f_j, relations
/// a_i (e_i (x) f_j) = 0 and b_j (e_i (x) f_j) = 0.
pub fn tensor_by_presentation(a: &FgAbelianGroup, b: &FgAbelianGroup) -> FgAbelianGroup {
    let (oa, ob) = (cyclic_orders(a), cyclic_orders(b));
    let generators = oa.len() * ob.len();
    let mut entries = Vec::new();
    let mut rel = 0;
    for (i, x) in oa.iter().enumerate() {
        for (j, y) in ob.iter().enumerate() {
            let g = i * ob.len() + j;
            for order in [x, y] {
                if !order.is_zero() {
                    entries.push((rel, g, order.clone()));
                    rel += 1;
                }
            }
        }
    }
    cokernel(
        generators,
        &IntMatrix::from_entries(rel, generators, entries),
    )
}

/// Tor(A, B) as the kernel of multiplication maps, counted pairwise:
/// Tor(Z/a, Z/b) is the b-torsion of Z/a, of order gcd(a, b), computed here by
/// brute-force counting of solutions to b*x = 0 mod a.
pub fn tor_by_counting(a: &FgAbelianGroup, b: &FgAbelianGroup) -> FgAbelianGroup {
    let mut orders = Vec::new();
    for x in a.torsion() {
        for y in b.torsion() {
            let xa: u64 = x.try_into().expect("small torsion");
            let yb: u64 = y.try_into().expect("small torsion");
            let count = (0..xa).filter(|t| (t * yb).is_multiple_of(xa)).count();
            orders.push(BigInt::from(count));
        }
    }
    FgAbelianGroup::new(0, orders)
}

/// Known homology of S^n.
pub fn sphere_homology(n: usize, k: usize) -> FgAbelianGroup {
    if k == 0 || k == n {
        FgAbelianGroup::integers()
    } else {
        FgAbelianGroup::zero()
    }
}

/// Known homology of the cyclic group of order m >= 2.
pub fn cyclic_group_homology(m: u64, n: usize) -> FgAbelianGroup {
    if n == 0 {
        FgAbelianGroup::integers()
    } else if n % 2 == 1 {
        FgAbelianGroup::cyclic(m)
    } else {
        FgAbelianGroup::zero()
    }
}

/// Künneth: H_n(X x Y) from the homology of the factors.
pub fn kunneth(hx: &[FgAbelianGroup], hy: &[FgAbelianGroup], n: usize) -> FgAbelianGroup {
    let at = |h: &[FgAbelianGroup], i: usize| h.get(i).cloned().unwrap_or_default();
    let mut total = FgAbelianGroup::zero();
    for i in 0..=n {
        total = total.direct_sum(&at(hx, i).tensor(&at(hy, n - i)));
    }
    for i in 0..n {
        total = total.direct_sum(&tor_by_counting(&at(hx, i), &at(hy, n - 1 - i)));
    }
    total
}

pub fn as_dense(rows: &[&[i64]]) -> Dense {
    rows.iter()
        .map(|r| r.iter().map(|&v| BigInt::from(v)).collect())
        .collect()
}
