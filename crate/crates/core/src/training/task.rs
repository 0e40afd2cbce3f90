use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::permops::gt_permutation;
use crate::tensor::{Shape, Tensor};
use crate::Real;

/// Range of raw values in the scalar task.
pub const SCALAR_RANGE: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Elements are numbers drawn from `U[-10, 10]`; the key is the element.
    Scalar,
    /// Elements are vectors from `U[-1, 1]^d` with key `tanh(wᵀx + b)`.
    Vector,
}

/// A synthetic sorting task; the vector kind carries its hidden key map.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    kind: TaskKind,
    dim: usize,
    weights: Vec<f64>,
    bias: f64,
}

/// One sequence: inputs, sort keys and the ground-truth permutation.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub x: Tensor<T>,
    pub keys: Vec<T>,
    pub gt: Tensor<T>,
}

impl SyntheticTask {
    pub fn scalar() -> Self {
        Self {
            kind: TaskKind::Scalar,
            dim: 1,
            weights: vec![1.0],
            bias: 0.0,
        }
    }

    /// Vector task whose hidden map is drawn from `task_seed`.
    pub fn vector(dim: usize, task_seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("vector task needs dim >= 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(task_seed);
        let weights = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let bias = rng.gen_range(-0.5..0.5);
        Ok(Self {
            kind: TaskKind::Vector,
            dim,
            weights,
            bias,
        })
    }

    pub fn kind(&self) -> TaskKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Sort key of one element.
    pub fn key<T: Real>(&self, row: &[T]) -> T {
        match self.kind {
            TaskKind::Scalar => row[0],
            TaskKind::Vector => {
                let z = row
                    .iter()
                    .zip(&self.weights)
                    .fold(T::of(self.bias), |acc, (&x, &w)| acc + x * T::of(w));
                z.tanh()
            }
        }
    }

    /// One sequence of `n` elements.
    pub fn sample<T: Real>(&self, n: usize, rng: &mut ChaCha8Rng) -> Sample<T> {
        let range = match self.kind {
            TaskKind::Scalar => SCALAR_RANGE,
            TaskKind::Vector => 1.0,
        };
        let data: Vec<T> = (0..n * self.dim)
            .map(|_| T::of(rng.gen_range(-range..=range)))
            .collect();
        let x = Tensor::new(Shape::Matrix(n, self.dim), data).expect("shape");
        let keys: Vec<T> = (0..n).map(|i| self.key(x.row(i))).collect();
        let gt = gt_permutation(&keys).perm;
        Sample { x, keys, gt }
    }
}

/// `count` sequences of length `n`, deterministic in `seed`.
pub fn gen_task<T: Real>(
    task: &SyntheticTask,
    n: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<Sample<T>>> {
    if n == 0 {
        return Err(Error::invalid("sequence length must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count).map(|_| task.sample(n, &mut rng)).collect())
}
