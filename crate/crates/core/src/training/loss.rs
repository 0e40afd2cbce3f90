use crate::adgraph::{Node, Tape};
use crate::error::{Error, Result};
use crate::permops::{apply_permutation, split_indices};
use crate::sortnet::PermMatrix;
use crate::tensor::{Shape, Tensor};
use crate::Real;

const CLAMP: f64 = 1e-12;

fn check_gt<T: Real>(p: &PermMatrix, gt: &Tensor<T>, op: &'static str) -> Result<()> {
    let n = p.n();
    if gt.shape() != Shape::Matrix(n, n) {
        return Err(Error::ShapeMismatch {
            op,
            lhs: Shape::Matrix(n, n),
            rhs: gt.shape(),
        });
    }
    Ok(())
}

/// Element-wise binary cross-entropy between `P_soft` and `P_gt`, summed.
///
/// Entries are clamped to `[ε, 1-ε]` before the logs, with `ε = 1e-12`
/// (raised to machine epsilon for `f32`, where `1 - 1e-12` rounds to 1).
pub fn loss_soft<T: Real>(tape: &mut Tape<T>, p_soft: &PermMatrix, gt: &Tensor<T>) -> Result<Node> {
    check_gt(p_soft, gt, "loss_soft")?;
    let eps = T::of(CLAMP).max(T::epsilon());
    let p = tape.clamp(p_soft.node(), eps, T::one() - eps);
    let log_p = tape.log(p)?;
    let q = tape.affine(p, -T::one(), T::one());
    let log_q = tape.log(q)?;
    let g = tape.constant(gt.clone());
    let g_inv = tape.constant(gt.map(|v| T::one() - v));
    let a = tape.mul(g, log_p)?;
    let b = tape.mul(g_inv, log_q)?;
    let both = tape.add(a, b)?;
    let total = tape.sum(both);
    Ok(tape.neg(total))
}

fn squared_distance<T: Real>(tape: &mut Tape<T>, a: Node, b: Node) -> Result<Node> {
    let d = tape.sub(a, b)?;
    let sq = tape.mul(d, d)?;
    Ok(tape.sum(sq))
}

/// `‖P_hardᵀX - P_gtᵀX‖_F²`.
pub fn loss_hard<T: Real>(
    tape: &mut Tape<T>,
    p_hard: &PermMatrix,
    gt: &Tensor<T>,
    x: Node,
) -> Result<Node> {
    check_gt(p_hard, gt, "loss_hard")?;
    let pred = apply_permutation(tape, p_hard, x)?;
    let g = tape.constant(gt.clone());
    let g_t = tape.transpose(g)?;
    let truth = tape.matmul(g_t, x)?;
    squared_distance(tape, pred, truth)
}

/// [`loss_hard`] evaluated separately on the first `n1` and remaining rows.
///
/// Each part compares its own sub-permutation of `P_hard` (taken from the
/// rows of the part and the columns its elements occupy) with the matching
/// sub-permutation of `P_gt`; the two losses are summed.
pub fn loss_hard_split<T: Real>(
    tape: &mut Tape<T>,
    p_hard: &PermMatrix,
    gt: &Tensor<T>,
    x: Node,
    n1: usize,
) -> Result<Node> {
    check_gt(p_hard, gt, "loss_hard_split")?;
    let pred_parts = split_indices(p_hard.values(tape), n1)?;
    let gt_parts = split_indices(gt, n1)?;
    let cols: Vec<usize> = (0..tape.shape(x).dims().1).collect();
    let g = tape.constant(gt.clone());
    let mut total = tape.scalar(T::zero());
    for ((rows, p_cols), (_, g_cols)) in pred_parts.iter().zip(gt_parts.iter()) {
        if rows.is_empty() {
            continue;
        }
        let xp = tape.submatrix(x, rows, &cols)?;
        let p = tape.submatrix(p_hard.node(), rows, p_cols)?;
        let q = tape.submatrix(g, rows, g_cols)?;
        let pt = tape.transpose(p)?;
        let qt = tape.transpose(q)?;
        let pred = tape.matmul(pt, xp)?;
        let truth = tape.matmul(qt, xp)?;
        let part = squared_distance(tape, pred, truth)?;
        total = tape.add(total, part)?;
    }
    Ok(total)
}

/// Loss nodes of one sequence.
#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub soft: Node,
    pub hard: Node,
    pub total: Node,
}

/// `L_soft + λ L_hard`; with `split` the hard term uses [`loss_hard_split`]
/// at `n / 2`.
pub fn combined_loss<T: Real>(
    tape: &mut Tape<T>,
    p_soft: &PermMatrix,
    p_hard: &PermMatrix,
    gt: &Tensor<T>,
    x: Node,
    lambda: T,
    split: bool,
) -> Result<LossParts> {
    if lambda < T::zero() {
        return Err(Error::invalid("lambda must be non-negative"));
    }
    let soft = loss_soft(tape, p_soft, gt)?;
    let hard = if split {
        loss_hard_split(tape, p_hard, gt, x, p_hard.n() / 2)?
    } else {
        loss_hard(tape, p_hard, gt, x)?
    };
    let weighted = tape.scale(hard, lambda);
    let total = tape.add(soft, weighted)?;
    Ok(LossParts { soft, hard, total })
}
