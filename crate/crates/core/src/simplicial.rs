//! Finite simplicial complexes built from constructor expressions, and their
//! integral homology.

use std::borrow::Cow;
use std::collections::{BTreeSet, HashMap};

use num_bigint::BigInt;
use thiserror::Error;

use crate::grouphom::{GroupExpr, GroupHomError};
use crate::snf::{self, homology_from_boundaries, FgAbelianGroup, IntMatrix, SnfError};
use crate::term::Term;

const RP2_DATA: &str = include_str!("../data/rp2.txt");

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimplicialError {
    #[error("{0} is not buildable as a finite complex; route it to the group homology kernel")]
    NotBuildable(String),
    #[error("not a space expression: {0}")]
    InvalidSpace(String),
    #[error("invalid complex: {0}")]
    InvalidComplex(String),
    #[error(transparent)]
    Snf(#[from] SnfError),
    #[error(transparent)]
    Group(#[from] GroupHomError),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum SpaceExpr {
    Sphere(u32),
    Simplex(u32),
    Product(Box<SpaceExpr>, Box<SpaceExpr>),
    Rp2,
    EmSpace(GroupExpr, u32),
}

impl SpaceExpr {
    pub fn product(a: SpaceExpr, b: SpaceExpr) -> Self {
        SpaceExpr::Product(Box::new(a), Box::new(b))
    }

    pub fn from_term(t: &Term) -> Result<Self, SimplicialError> {
        let invalid = || SimplicialError::InvalidSpace(crate::expr::render(t));
        let small = |i: usize, min: u32| {
            t.args()
                .get(i)
                .and_then(Term::as_integer)
                .and_then(|v| u32::try_from(v).ok())
                .filter(|&n| n >= min)
                .ok_or_else(invalid)
        };
        if t.is("algtop1", "sphere") {
            Ok(SpaceExpr::Sphere(small(0, 1)?))
        } else if t.is("algtop1", "simplex") {
            Ok(SpaceExpr::Simplex(small(0, 0)?))
        } else if t.is("algtop1", "rp2") && t.args().is_empty() {
            Ok(SpaceExpr::Rp2)
        } else if t.is("algtop1", "cartesian_product") {
            let [a, b] = t.args() else {
                return Err(invalid());
            };
            Ok(SpaceExpr::product(Self::from_term(a)?, Self::from_term(b)?))
        } else if t.is("algtop1", "em_space") {
            let group = t.args().first().ok_or_else(invalid)?;
            Ok(SpaceExpr::EmSpace(
                GroupExpr::from_term(group)?,
                small(1, 1)?,
            ))
        } else {
            Err(invalid())
        }
    }

    pub fn to_term(&self) -> Term {
        match self {
            SpaceExpr::Sphere(n) => Term::apply("algtop1", "sphere", vec![Term::int(*n)]),
            SpaceExpr::Simplex(n) => Term::apply("algtop1", "simplex", vec![Term::int(*n)]),
            SpaceExpr::Rp2 => Term::sym("algtop1", "rp2"),
            SpaceExpr::Product(a, b) => Term::apply(
                "algtop1",
                "cartesian_product",
                vec![a.to_term(), b.to_term()],
            ),
            SpaceExpr::EmSpace(g, n) => {
                Term::apply("algtop1", "em_space", vec![g.to_term(), Term::int(*n)])
            }
        }
    }
}

/// Vertices are `0..vertex_count`; facets are strictly increasing and maximal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimplicialComplex {
    vertex_count: usize,
    facets: Vec<Vec<u32>>,
}

impl SimplicialComplex {
    /// Sorts each facet and drops facets contained in other facets.
    pub fn new(vertex_count: usize, facets: Vec<Vec<u32>>) -> Result<Self, SimplicialError> {
        let mut facets: Vec<Vec<u32>> = facets
            .into_iter()
            .map(|mut f| {
                f.sort_unstable();
                f
            })
            .collect();
        for f in &facets {
            if f.is_empty() || f.windows(2).any(|w| w[0] == w[1]) {
                return Err(SimplicialError::InvalidComplex(format!(
                    "facet {f:?} is empty or repeats a vertex"
                )));
            }
            if f.iter().any(|&v| v as usize >= vertex_count) {
                return Err(SimplicialError::InvalidComplex(format!(
                    "facet {f:?} uses a vertex outside 0..{vertex_count}"
                )));
            }
        }
        facets.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
        facets.dedup();
        let mut maximal: Vec<Vec<u32>> = Vec::new();
        for f in facets {
            let covered = maximal
                .iter()
                .any(|m| m.len() > f.len() && is_sorted_subset(&f, m));
            if !covered {
                maximal.push(f);
            }
        }
        maximal.sort();
        Ok(SimplicialComplex {
            vertex_count,
            facets: maximal,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    pub fn facets(&self) -> &[Vec<u32>] {
        &self.facets
    }

    pub fn dimension(&self) -> usize {
        self.facets.iter().map(|f| f.len() - 1).max().unwrap_or(0)
    }

    /// All faces grouped by dimension, each dimension in lexicographic order.
    pub fn faces(&self) -> Vec<Vec<Vec<u32>>> {
        let mut by_dim: Vec<BTreeSet<Vec<u32>>> = vec![BTreeSet::new(); self.dimension() + 1];
        for f in &self.facets {
            let k = f.len();
            for mask in 1u64..(1u64 << k) {
                let face: Vec<u32> = (0..k)
                    .filter(|i| mask >> i & 1 == 1)
                    .map(|i| f[i])
                    .collect();
                by_dim[face.len() - 1].insert(face);
            }
        }
        by_dim
            .into_iter()
            .map(|s| s.into_iter().collect())
            .collect()
    }

    pub fn face_counts(&self) -> Vec<usize> {
        self.faces().iter().map(Vec::len).collect()
    }

    /// Applies a vertex permutation `v -> perm[v]`.
    pub fn relabel(&self, perm: &[u32]) -> Result<Self, SimplicialError> {
        if perm.len() != self.vertex_count {
            return Err(SimplicialError::InvalidComplex(
                "permutation has wrong length".into(),
            ));
        }
        let facets = self
            .facets
            .iter()
            .map(|f| f.iter().map(|&v| perm[v as usize]).collect())
            .collect();
        Self::new(self.vertex_count, facets)
    }
}

fn is_sorted_subset(small: &[u32], big: &[u32]) -> bool {
    let mut it = big.iter();
    small.iter().all(|v| it.any(|b| b == v))
}

/// Free chain groups of ranks `n_0..n_d` with boundaries `d_1..d_d`,
/// where `d_k` is an `n_{k-1} x n_k` matrix.
#[derive(Debug, Clone)]
pub struct ChainComplex {
    sizes: Vec<usize>,
    boundaries: Vec<IntMatrix>,
}

impl ChainComplex {
    pub fn new(sizes: Vec<usize>, boundaries: Vec<IntMatrix>) -> Result<Self, SnfError> {
        if sizes.len() != boundaries.len() + 1 {
            return Err(SnfError::DimensionMismatch(format!(
                "{} chain groups need {} boundaries, got {}",
                sizes.len(),
                sizes.len().saturating_sub(1),
                boundaries.len()
            )));
        }
        for (i, d) in boundaries.iter().enumerate() {
            let k = i + 1;
            if d.rows() != sizes[k - 1] || d.cols() != sizes[k] {
                return Err(SnfError::DimensionMismatch(format!(
                    "d_{k} is {}x{}, expected {}x{}",
                    d.rows(),
                    d.cols(),
                    sizes[k - 1],
                    sizes[k]
                )));
            }
        }
        for (i, pair) in boundaries.windows(2).enumerate() {
            if !pair[0].mul(&pair[1])?.is_zero() {
                return Err(SnfError::InvalidComplex(format!(
                    "d_{} * d_{} is nonzero",
                    i + 1,
                    i + 2
                )));
            }
        }
        Ok(ChainComplex { sizes, boundaries })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn top_degree(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn size(&self, k: usize) -> usize {
        self.sizes.get(k).copied().unwrap_or(0)
    }

    /// `d_k`, including the zero maps out of degree 0 and into the top degree.
    pub fn boundary(&self, k: usize) -> Cow<'_, IntMatrix> {
        if k >= 1 && k <= self.boundaries.len() {
            Cow::Borrowed(&self.boundaries[k - 1])
        } else {
            let rows = if k == 0 { 0 } else { self.size(k - 1) };
            Cow::Owned(IntMatrix::zeros(rows, self.size(k)))
        }
    }

    pub fn homology(&self, k: usize) -> Result<FgAbelianGroup, SnfError> {
        if k > self.top_degree() {
            return Ok(FgAbelianGroup::zero());
        }
        homology_from_boundaries(self.size(k), &self.boundary(k), &self.boundary(k + 1))
    }

    /// Every homology group, reducing each boundary matrix once.
    pub fn homology_all(&self) -> Vec<FgAbelianGroup> {
        let factors: Vec<Vec<BigInt>> = self.boundaries.iter().map(snf::snf).collect();
        (0..=self.top_degree())
            .map(|k| {
                let outgoing = if k == 0 { 0 } else { factors[k - 1].len() };
                let incoming: &[BigInt] = factors.get(k).map_or(&[], Vec::as_slice);
                FgAbelianGroup::new(
                    self.sizes[k] - outgoing - incoming.len(),
                    incoming.iter().filter(|d| **d != BigInt::from(1)).cloned(),
                )
            })
            .collect()
    }
}

pub fn chain_complex(k: &SimplicialComplex) -> Result<ChainComplex, SimplicialError> {
    let faces = k.faces();
    let index: Vec<HashMap<&[u32], usize>> = faces
        .iter()
        .map(|dim| {
            dim.iter()
                .enumerate()
                .map(|(i, f)| (f.as_slice(), i))
                .collect()
        })
        .collect();
    let mut boundaries = Vec::new();
    for dim in 1..faces.len() {
        let mut entries = Vec::new();
        let mut face = Vec::with_capacity(dim);
        for (col, simplex) in faces[dim].iter().enumerate() {
            for drop in 0..=dim {
                face.clear();
                face.extend(
                    simplex
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| *i != drop)
                        .map(|(_, v)| *v),
                );
                let row = *index[dim - 1].get(face.as_slice()).ok_or_else(|| {
                    SimplicialError::InvalidComplex(format!("face {face:?} missing"))
                })?;
                let sign = if drop % 2 == 0 { 1 } else { -1 };
                entries.push((row, col, BigInt::from(sign)));
            }
        }
        boundaries.push(IntMatrix::from_entries(
            faces[dim - 1].len(),
            faces[dim].len(),
            entries,
        ));
    }
    ChainComplex::new(faces.iter().map(Vec::len).collect(), boundaries).map_err(|e| match e {
        SnfError::InvalidComplex(msg) => SimplicialError::InvalidComplex(msg),
        other => SimplicialError::Snf(other),
    })
}

pub fn build(e: &SpaceExpr) -> Result<SimplicialComplex, SimplicialError> {
    match e {
        SpaceExpr::Sphere(n) => {
            let n = *n as usize;
            let vertices = n + 2;
            let facets = (0..vertices as u32)
                .map(|skip| (0..vertices as u32).filter(|&v| v != skip).collect())
                .collect();
            SimplicialComplex::new(vertices, facets)
        }
        SpaceExpr::Simplex(n) => SimplicialComplex::new(*n as usize + 1, vec![(0..=*n).collect()]),
        SpaceExpr::Rp2 => rp2(),
        SpaceExpr::Product(a, b) => Ok(staircase_product(&build(a)?, &build(b)?)),
        SpaceExpr::EmSpace(..) => Err(SimplicialError::NotBuildable(crate::expr::render(
            &e.to_term(),
        ))),
    }
}

fn rp2() -> Result<SimplicialComplex, SimplicialError> {
    let mut vertices = None;
    let mut facets = Vec::new();
    for line in RP2_DATA.lines().map(str::trim) {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(n) = line.strip_prefix("vertices ") {
            vertices = n.trim().parse::<usize>().ok();
            continue;
        }
        let facet = line
            .split_whitespace()
            .map(str::parse::<u32>)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| SimplicialError::InvalidComplex(format!("rp2 data: {e}")))?;
        facets.push(facet);
    }
    let vertices = vertices
        .ok_or_else(|| SimplicialError::InvalidComplex("rp2 data lacks vertex count".into()))?;
    SimplicialComplex::new(vertices, facets)
}

/// Lattice paths from `(0,0)` to `(p,q)` taking unit steps right or up.
fn staircases(p: usize, q: usize) -> Vec<Vec<(usize, usize)>> {
    fn walk(
        i: usize,
        j: usize,
        p: usize,
        q: usize,
        path: &mut Vec<(usize, usize)>,
        out: &mut Vec<Vec<(usize, usize)>>,
    ) {
        path.push((i, j));
        if i == p && j == q {
            out.push(path.clone());
        } else {
            if i < p {
                walk(i + 1, j, p, q, path, out);
            }
            if j < q {
                walk(i, j + 1, p, q, path, out);
            }
        }
        path.pop();
    }
    let mut out = Vec::new();
    walk(0, 0, p, q, &mut Vec::new(), &mut out);
    out
}

/// Ordered product triangulation: vertex `(x, y)` is `x * |Y| + y`, and each
/// pair of facets contributes one top simplex per staircase path.
pub fn staircase_product(x: &SimplicialComplex, y: &SimplicialComplex) -> SimplicialComplex {
    let width = y.vertex_count as u32;
    let mut facets = Vec::new();
    for sigma in &x.facets {
        for tau in &y.facets {
            for path in staircases(sigma.len() - 1, tau.len() - 1) {
                facets.push(
                    path.iter()
                        .map(|&(i, j)| sigma[i] * width + tau[j])
                        .collect(),
                );
            }
        }
    }
    SimplicialComplex::new(x.vertex_count * y.vertex_count, facets)
        .expect("product of valid complexes is valid")
}

pub fn euler(k: &SimplicialComplex) -> i64 {
    k.face_counts()
        .iter()
        .enumerate()
        .map(|(d, &n)| if d % 2 == 0 { n as i64 } else { -(n as i64) })
        .sum()
}

pub fn homology(e: &SpaceExpr, k: usize) -> Result<FgAbelianGroup, SimplicialError> {
    let complex = build(e)?;
    if k > complex.dimension() {
        return Ok(FgAbelianGroup::zero());
    }
    Ok(chain_complex(&complex)?.homology(k)?)
}

pub fn homology_all(e: &SpaceExpr) -> Result<Vec<FgAbelianGroup>, SimplicialError> {
    Ok(chain_complex(&build(e)?)?.homology_all())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    use SpaceExpr::*;

    #[test]
    fn sphere_two_is_tetrahedron_boundary() {
        let k = build(&Sphere(2)).unwrap();
        assert_eq!(k.vertex_count(), 4);
        assert_eq!(k.facets().len(), 4);
        assert!(k.facets().iter().all(|f| f.len() == 3));
        assert_eq!(euler(&k), 2);
    }

    #[test]
    fn euler_characteristics() {
        assert_eq!(euler(&build(&Simplex(3)).unwrap()), 1);
        // torus face counts: 9 vertices, 27 edges, 18 triangles
        let torus = build(&SpaceExpr::product(Sphere(1), Sphere(1))).unwrap();
        assert_eq!(torus.face_counts(), vec![9, 27, 18]);
        assert_eq!(euler(&torus), 0);
    }

    #[test]
    fn em_space_is_not_buildable() {
        let err = build(&EmSpace(GroupExpr::Cyclic(5), 1)).unwrap_err();
        assert!(matches!(err, SimplicialError::NotBuildable(_)));
    }

    #[test]
    fn edge_boundary_signs() {
        let cx = chain_complex(&build(&Simplex(1)).unwrap()).unwrap();
        assert_eq!(cx.sizes(), &[2, 1]);
        assert_eq!(cx.boundary(1).to_dense(), oracle::as_dense(&[&[-1], &[1]]));
    }

    #[test]
    fn circle_boundary_rank() {
        let cx = chain_complex(&build(&Sphere(1)).unwrap()).unwrap();
        assert_eq!(snf::rank(&cx.boundary(1)), 2);
        assert_eq!(oracle::rational_rank(&cx.boundary(1).to_dense()), 2);
    }

    #[test]
    fn sphere_four_top_homology() {
        assert_eq!(homology(&Sphere(4), 4).unwrap(), FgAbelianGroup::integers());
        for k in 1..4 {
            assert!(homology(&Sphere(4), k).unwrap().is_trivial());
        }
    }

    #[test]
    fn projective_plane() {
        assert_eq!(homology(&Rp2, 0).unwrap(), FgAbelianGroup::integers());
        assert_eq!(homology(&Rp2, 1).unwrap(), FgAbelianGroup::cyclic(2));
        assert_eq!(homology(&Rp2, 2).unwrap(), FgAbelianGroup::zero());
        let k = build(&Rp2).unwrap();
        assert_eq!(k.face_counts(), vec![6, 15, 10]);
    }

    #[test]
    fn simplex_is_acyclic_and_high_degrees_vanish() {
        for k in 1..6 {
            assert!(homology(&Simplex(4), k).unwrap().is_trivial());
        }
        assert!(homology(&Sphere(2), 9).unwrap().is_trivial());
    }

    #[test]
    fn per_degree_and_batched_homology_agree() {
        let e = SpaceExpr::product(Rp2, Sphere(1));
        let all = homology_all(&e).unwrap();
        for (k, h) in all.iter().enumerate() {
            assert_eq!(&homology(&e, k).unwrap(), h);
        }
    }

    #[test]
    fn relabeling_preserves_homology() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        for e in [Rp2, Sphere(3), SpaceExpr::product(Sphere(1), Simplex(1))] {
            let k = build(&e).unwrap();
            let expected = chain_complex(&k).unwrap().homology_all();
            for _ in 0..3 {
                let mut perm: Vec<u32> = (0..k.vertex_count() as u32).collect();
                perm.shuffle(&mut rng);
                let relabeled = k.relabel(&perm).unwrap();
                assert_eq!(chain_complex(&relabeled).unwrap().homology_all(), expected);
            }
        }
    }

    #[test]
    fn non_maximal_facets_are_dropped() {
        let k = SimplicialComplex::new(3, vec![vec![0, 1, 2], vec![1, 0], vec![2]]).unwrap();
        assert_eq!(k.facets(), &[vec![0, 1, 2]]);
        assert!(SimplicialComplex::new(2, vec![vec![0, 2]]).is_err());
        assert!(SimplicialComplex::new(2, vec![vec![1, 1]]).is_err());
    }

    #[test]
    fn term_round_trip() {
        let e = SpaceExpr::product(Rp2, EmSpace(GroupExpr::Cyclic(3), 1));
        assert_eq!(SpaceExpr::from_term(&e.to_term()).unwrap(), e);
        assert!(
            SpaceExpr::from_term(&Term::apply("algtop1", "sphere", vec![Term::int(0)])).is_err()
        );
    }
}
