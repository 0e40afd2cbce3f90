//! Ground-truth permutations, argsort, accuracy metrics and splitting of
//! hard permutation matrices.

use std::cmp::Ordering;

use crate::adgraph::{Node, Tape};
use crate::error::{Error, Result};
use crate::sortnet::PermMatrix;
use crate::tensor::{Shape, Tensor};
use crate::Real;

/// A permutation of `0..n` given as indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Ranking {
    indices: Vec<usize>,
}

impl Ranking {
    pub fn new(indices: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; indices.len()];
        for &i in &indices {
            if i >= seen.len() || std::mem::replace(&mut seen[i], true) {
                return Err(Error::invalid(format!("{indices:?} is not a permutation")));
            }
        }
        Ok(Self { indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Stable ascending argsort.
pub fn argsort<T: Real>(v: &[T]) -> Ranking {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap_or(Ordering::Equal));
    Ranking { indices: idx }
}

/// Hard permutation derived from sort keys, plus the keys themselves.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth<T> {
    pub perm: Tensor<T>,
    pub keys: Vec<T>,
}

/// `[P]_{ij} = 1` iff key `i` lands at sorted position `j`; ties keep their
/// original order.
pub fn gt_permutation<T: Real>(keys: &[T]) -> GroundTruth<T> {
    let n = keys.len();
    let order = argsort(keys);
    let mut perm = Tensor::zeros(Shape::Matrix(n, n));
    for (pos, &i) in order.indices().iter().enumerate() {
        perm.set(i, pos, T::one());
    }
    GroundTruth {
        perm,
        keys: keys.to_vec(),
    }
}

/// Entries are at least `-tol` and every row and column sums to `1 ± tol`.
pub fn is_doubly_stochastic<T: Real>(p: &Tensor<T>, tol: T) -> bool {
    let (r, c) = p.shape().dims();
    if r != c || !matches!(p.shape(), Shape::Matrix(..)) {
        return false;
    }
    if p.data().iter().any(|&v| !(v >= -tol)) {
        return false;
    }
    let ok = |s: T| (s - T::one()).abs() <= tol;
    (0..r).all(|i| ok(p.row(i).iter().fold(T::zero(), |a, &b| a + b)))
        && (0..c).all(|j| ok((0..r).fold(T::zero(), |a, i| a + p.get(i, j))))
}

/// Every entry is exactly 0 or 1 with a single 1 per row and column.
pub fn is_hard_permutation<T: Real>(p: &Tensor<T>) -> bool {
    let (r, c) = p.shape().dims();
    if r != c || !matches!(p.shape(), Shape::Matrix(..)) {
        return false;
    }
    let binary = p.data().iter().all(|&v| v == T::zero() || v == T::one());
    let count = |it: &mut dyn Iterator<Item = T>| it.filter(|&v| v == T::one()).count() == 1;
    binary
        && (0..r).all(|i| count(&mut p.row(i).iter().copied()))
        && (0..c).all(|j| count(&mut (0..r).map(|i| p.get(i, j))))
}

/// Sorted position of each element of a hard permutation.
fn positions<T: Real>(p: &Tensor<T>) -> Result<Vec<usize>> {
    if !is_hard_permutation(p) {
        return Err(Error::invalid("expected a hard permutation matrix"));
    }
    Ok((0..p.rows())
        .map(|i| p.row(i).iter().position(|&v| v == T::one()).expect("hard"))
        .collect())
}

/// Row and column index sets selecting the sub-blocks of a hard permutation
/// for a split into the first `n1` and the remaining elements.
///
/// The columns of each part are the sorted positions its elements occupy,
/// in ascending order, so the sub-block keeps their relative order.
pub fn split_indices<T: Real>(p: &Tensor<T>, n1: usize) -> Result<[(Vec<usize>, Vec<usize>); 2]> {
    let pos = positions(p)?;
    let n = pos.len();
    if n1 > n {
        return Err(Error::invalid(format!("split point {n1} exceeds size {n}")));
    }
    let part = |rows: std::ops::Range<usize>| {
        let mut cols: Vec<usize> = rows.clone().map(|i| pos[i]).collect();
        cols.sort_unstable();
        (rows.collect::<Vec<_>>(), cols)
    };
    Ok([part(0..n1), part(n1..n)])
}

fn submatrix<T: Real>(p: &Tensor<T>, rows: &[usize], cols: &[usize]) -> Tensor<T> {
    let data = rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&c| p.get(r, c)))
        .collect();
    Tensor::matrix(rows.len(), cols.len(), data).expect("shape")
}

/// Splits a hard permutation over `n1 + n2` elements into the permutations
/// of the first `n1` and the last `n2` elements.
pub fn split_hard_permutation<T: Real>(
    p: &Tensor<T>,
    n1: usize,
    n2: usize,
) -> Result<(Tensor<T>, Tensor<T>)> {
    if n1 + n2 != p.rows() || p.rows() != p.cols() {
        return Err(Error::invalid(format!(
            "split {n1} + {n2} does not match a {} matrix",
            p.shape()
        )));
    }
    let [(r1, c1), (r2, c2)] = split_indices(p, n1)?;
    Ok((submatrix(p, &r1, &c1), submatrix(p, &r2, &c2)))
}

/// Splits into consecutive parts of the given sizes by repeated two-way
/// splits.
pub fn split_hard_permutation_multi<T: Real>(
    p: &Tensor<T>,
    sizes: &[usize],
) -> Result<Vec<Tensor<T>>> {
    let total: usize = sizes.iter().sum();
    if total != p.rows() {
        return Err(Error::invalid(format!(
            "sizes {sizes:?} do not add up to {}",
            p.rows()
        )));
    }
    let mut out = Vec::with_capacity(sizes.len());
    let mut rest = p.clone();
    for (k, &size) in sizes.iter().enumerate() {
        if k + 1 == sizes.len() {
            out.push(rest);
            break;
        }
        let remaining = rest.rows() - size;
        let (head, tail) = split_hard_permutation(&rest, size, remaining)?;
        out.push(head);
        rest = tail;
    }
    Ok(out)
}

/// One evaluated sequence: scores, predicted permutation and ground truth.
#[derive(Debug, Clone, Copy)]
pub struct MetricSample<'a, T> {
    pub scores: &'a [T],
    pub perm: &'a Tensor<T>,
    pub gt: &'a Tensor<T>,
}

/// `(acc_em, acc_ew)` comparing `argsort(P_gtᵀ s)` with `argsort(Pᵀ s)`.
pub fn accuracy_metrics<T: Real>(samples: &[MetricSample<'_, T>]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::invalid("accuracy over an empty batch"));
    }
    let mut exact = 0usize;
    let mut matched = 0usize;
    let mut total = 0usize;
    for s in samples {
        let n = s.scores.len();
        if s.perm.shape() != Shape::Matrix(n, n) || s.gt.shape() != Shape::Matrix(n, n) {
            return Err(Error::invalid("metric sample sizes disagree"));
        }
        let v = Tensor::vector(s.scores.to_vec());
        let truth = argsort(s.gt.transpose().matmul(&v)?.data());
        let pred = argsort(s.perm.transpose().matmul(&v)?.data());
        let hits = truth
            .indices()
            .iter()
            .zip(pred.indices())
            .filter(|(a, b)| a == b)
            .count();
        matched += hits;
        total += n;
        if hits == n {
            exact += 1;
        }
    }
    Ok((
        exact as f64 / samples.len() as f64,
        matched as f64 / total.max(1) as f64,
    ))
}

/// `Pᵀ X` on the tape.
pub fn apply_permutation<T: Real>(tape: &mut Tape<T>, p: &PermMatrix, x: Node) -> Result<Node> {
    let rows = tape.shape(x).dims().0;
    if rows != p.n() {
        return Err(Error::ShapeMismatch {
            op: "apply_permutation",
            lhs: tape.shape(p.node()),
            rhs: tape.shape(x),
        });
    }
    let pt = tape.transpose(p.node())?;
    tape.matmul(pt, x)
}
