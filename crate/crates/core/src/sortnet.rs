//! Sorting-network topologies and their execution on tape nodes.
//!
//! Permutation matrices use the convention `[P]_{ij} = 1` when unsorted
//! element `i` ends up at sorted position `j`, so `Pᵀ s` is the sorted
//! sequence. A stage matrix `P_i` is the identity except for the 2x2 blocks
//! of its comparators; stages are applied in order, so after `k` stages
//! `Pᵀ = P_kᵀ ··· P_1ᵀ`.

use serde::Serialize;

use crate::adgraph::{Node, Tape};
use crate::error::{Error, Result};
use crate::sigmoid::SigmoidSpec;
use crate::swap::{swap_with_block, SwapMode};
use crate::tensor::{Shape, Tensor};
use crate::Real;

pub type Stage = Vec<(usize, usize)>;

/// Comparator schedule: stages of disjoint `(i, j)` pairs with `i < j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WirePlan {
    n: usize,
    stages: Vec<Stage>,
}

impl WirePlan {
    pub fn new(n: usize, stages: Vec<Stage>) -> Result<Self> {
        for stage in &stages {
            validate_stage(n, stage)?;
        }
        Ok(Self { n, stages })
    }

    /// Odd-even transposition network: stages alternate between pairs
    /// `(0,1),(2,3),…` and `(1,2),(3,4),…`; empty stages are dropped.
    pub fn odd_even(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("sorting network needs n >= 1"));
        }
        let stages = (0..n)
            .map(|k| {
                (k % 2..n.saturating_sub(1))
                    .step_by(2)
                    .map(|i| (i, i + 1))
                    .collect::<Stage>()
            })
            .filter(|s| !s.is_empty())
            .collect();
        Ok(Self { n, stages })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    /// Runs the comparators on plain values.
    pub fn sort_values<T: PartialOrd + Copy>(&self, values: &mut [T]) {
        for stage in &self.stages {
            for &(i, j) in stage {
                if values[i] > values[j] {
                    values.swap(i, j);
                }
            }
        }
    }
}

fn validate_stage(n: usize, stage: &[(usize, usize)]) -> Result<()> {
    let mut seen = vec![false; n];
    for &(i, j) in stage {
        if i >= j || j >= n {
            return Err(Error::invalid(format!(
                "comparator ({i}, {j}) invalid for n = {n}"
            )));
        }
        for k in [i, j] {
            if std::mem::replace(&mut seen[k], true) {
                return Err(Error::invalid(format!(
                    "index {k} appears twice in one stage"
                )));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PermMode {
    Soft,
    Hard,
}

/// An `n x n` permutation matrix living on a tape.
#[derive(Debug, Clone, Copy)]
pub struct PermMatrix {
    node: Node,
    n: usize,
    mode: PermMode,
}

impl PermMatrix {
    pub fn new(node: Node, n: usize, mode: PermMode) -> Self {
        Self { node, n, mode }
    }

    pub fn node(&self) -> Node {
        self.node
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn mode(&self) -> PermMode {
        self.mode
    }

    pub fn values<'a, T: Real>(&self, tape: &'a Tape<T>) -> &'a Tensor<T> {
        tape.value(self.node)
    }
}

/// Splits a vector node into scalar nodes.
pub fn unstack<T: Real>(tape: &mut Tape<T>, v: Node) -> Result<Vec<Node>> {
    let n = match tape.shape(v) {
        Shape::Vector(n) => n,
        Shape::Scalar => 1,
        s => return Err(Error::invalid(format!("expected a vector, got {s}"))),
    };
    (0..n).map(|i| tape.index(v, i)).collect()
}

/// One stage on scalar nodes: returns the new values and `P_i`.
pub fn stage_permutation<T: Real>(
    tape: &mut Tape<T>,
    stage: &[(usize, usize)],
    s: &[Node],
    spec: &SigmoidSpec<T>,
    mode: SwapMode,
) -> Result<(Vec<Node>, PermMatrix)> {
    let n = s.len();
    validate_stage(n, stage)?;
    let mut out = s.to_vec();
    let mut sources = Vec::with_capacity(4 * stage.len());
    for &(i, j) in stage {
        let (o, block) = swap_with_block(tape, s[i], s[j], spec, mode)?;
        out[i] = o.lo;
        out[j] = o.hi;
        sources.extend([
            (i * n + i, block.keep),
            (i * n + j, block.swap),
            (j * n + i, block.swap),
            (j * n + j, block.keep),
        ]);
    }
    let node = tape.assemble(Tensor::identity(n), sources)?;
    Ok((out, PermMatrix::new(node, n, mode.perm_mode())))
}

/// Executes `plan` on the vector node `s`.
///
/// Returns the output vector and the composed matrix `P` with
/// `Pᵀ s ≈ s_sorted`.
pub fn execute<T: Real>(
    tape: &mut Tape<T>,
    plan: &WirePlan,
    s: Node,
    spec: &SigmoidSpec<T>,
    mode: SwapMode,
) -> Result<(Node, PermMatrix)> {
    let n = plan.n();
    if tape.shape(s) != Shape::Vector(n) {
        return Err(Error::ShapeMismatch {
            op: "execute",
            lhs: Shape::Vector(n),
            rhs: tape.shape(s),
        });
    }
    let mut values = unstack(tape, s)?;
    // running product Pᵀ = P_kᵀ ··· P_1ᵀ
    let mut pt: Option<Node> = None;
    for stage in plan.stages() {
        let (next, p) = stage_permutation(tape, stage, &values, spec, mode)?;
        values = next;
        let stage_t = tape.transpose(p.node())?;
        pt = Some(match pt {
            None => stage_t,
            Some(acc) => tape.matmul(stage_t, acc)?,
        });
    }
    let p = match pt {
        Some(pt) => tape.transpose(pt)?,
        None => tape.constant(Tensor::identity(n)),
    };
    let sorted = tape.stack(&values)?;
    Ok((sorted, PermMatrix::new(p, n, mode.perm_mode())))
}
