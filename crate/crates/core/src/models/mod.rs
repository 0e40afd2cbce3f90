//! Permutation-equivariant scorers mapping `X ∈ ℝ^{n×d}` to `s ∈ ℝ^n`.

mod attention;
mod mlp;
mod params;

pub use attention::AttentionSpec;
pub use mlp::MlpSpec;
pub use params::{BoundParams, ParamSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adgraph::{Node, Tape};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};
use crate::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ModelSpec {
    /// Scores are the first input column; no parameters.
    Identity,
    Mlp(MlpSpec),
    Attention(AttentionSpec),
}

impl ModelSpec {
    pub fn input_dim(&self) -> Option<usize> {
        match self {
            ModelSpec::Identity => None,
            ModelSpec::Mlp(m) => Some(m.input_dim),
            ModelSpec::Attention(a) => Some(a.input_dim),
        }
    }

    pub fn init_params<T: Real>(&self, seed: u64) -> ParamSet<T> {
        match self {
            ModelSpec::Identity => ParamSet::empty(seed),
            ModelSpec::Mlp(m) => m.init_params(seed),
            ModelSpec::Attention(a) => a.init_params(seed),
        }
    }

    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        params: &BoundParams,
        x: Node,
    ) -> Result<Node> {
        match self {
            ModelSpec::Identity => {
                let (n, d) = match tape.shape(x) {
                    Shape::Matrix(n, d) => (n, d),
                    s => return Err(Error::invalid(format!("expected n x d input, got {s}"))),
                };
                tape.gather(x, (0..n).map(|i| i * d).collect(), Shape::Vector(n))
            }
            ModelSpec::Mlp(m) => m.forward(tape, params, x),
            ModelSpec::Attention(a) => a.forward(tape, params, x),
        }
    }

    /// Scores for a plain input matrix, without recording gradients.
    pub fn scores<T: Real>(&self, params: &ParamSet<T>, x: &Tensor<T>) -> Result<Vec<T>> {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, false);
        let xn = tape.constant(x.clone());
        let s = self.forward(&mut tape, &bound, xn)?;
        Ok(tape.value(s).data().to_vec())
    }
}

pub(crate) fn check_cols<T: Real>(tape: &Tape<T>, x: Node, d: usize) -> Result<usize> {
    match tape.shape(x) {
        Shape::Matrix(n, c) if c == d => Ok(n),
        s => Err(Error::ShapeMismatch {
            op: "model input",
            lhs: s,
            rhs: Shape::Matrix(0, d),
        }),
    }
}

/// Affine map applied to every row: `X W + b`.
pub(crate) fn linear<T: Real>(
    tape: &mut Tape<T>,
    params: &BoundParams,
    x: Node,
    name: &str,
) -> Result<Node> {
    let w = params.get(&format!("{name}.weight"))?;
    let b = params.get(&format!("{name}.bias"))?;
    let xw = tape.matmul(x, w)?;
    tape.add_row_vector(xw, b)
}

/// Largest `|f(πX) - π(f(X))|` over random row permutations `π`.
pub fn check_equivariance<T: Real>(
    forward: impl Fn(&Tensor<T>) -> Result<Vec<T>>,
    x: &Tensor<T>,
    trials: usize,
    seed: u64,
) -> Result<T> {
    if trials == 0 {
        return Err(Error::invalid("check_equivariance needs trials >= 1"));
    }
    let n = x.rows();
    let base = forward(x)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = T::zero();
    for _ in 0..trials {
        let mut pi: Vec<usize> = (0..n).collect();
        pi.shuffle(&mut rng);
        let rows: Vec<Vec<T>> = pi.iter().map(|&i| x.row(i).to_vec()).collect();
        let permuted = forward(&Tensor::from_rows(&rows)?)?;
        for (k, &i) in pi.iter().enumerate() {
            worst = worst.max((permuted[k] - base[i]).abs());
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_x(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Tensor<f64> {
        Tensor::matrix(n, d, (0..n * d).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
    }

    fn attention() -> ModelSpec {
        ModelSpec::Attention(AttentionSpec::toy(8))
    }

    fn mlp() -> ModelSpec {
        ModelSpec::Mlp(MlpSpec::new(8, vec![16, 8]))
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        for spec in [mlp(), attention()] {
            let a: ParamSet<f64> = spec.init_params(1);
            let b: ParamSet<f64> = spec.init_params(1);
            let c: ParamSet<f64> = spec.init_params(2);
            assert_eq!(a, b);
            assert_ne!(a, c);
        }
        let wide: ParamSet<f64> = ModelSpec::Mlp(MlpSpec::new(100, vec![3])).init_params(5);
        let w = wide.get("layer0.weight").unwrap();
        assert!(w.data().iter().all(|v| v.abs() < 0.1));
    }

    #[test]
    fn mlp_is_instance_wise() {
        let spec = mlp();
        let params: ParamSet<f64> = spec.init_params(3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut x = random_x(&mut rng, 4, 8);
        let row = x.row(0).to_vec();
        for (j, v) in row.into_iter().enumerate() {
            x.set(2, j, v);
        }
        let s = spec.scores(&params, &x).unwrap();
        assert_eq!(s[0], s[2]);
        let dev = check_equivariance(|x| spec.scores(&params, x), &x, 20, 1).unwrap();
        assert_eq!(dev, 0.0);
        let single = spec.scores(&params, &random_x(&mut rng, 1, 8)).unwrap();
        assert!(single.len() == 1 && single[0].is_finite());
    }

    #[test]
    fn attention_is_equivariant() {
        let spec = attention();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for seed in 0..5 {
            let params: ParamSet<f64> = spec.init_params(seed);
            let x = random_x(&mut rng, 6, 8);
            let dev = check_equivariance(|x| spec.scores(&params, x), &x, 20, seed).unwrap();
            assert!(dev < 1e-9, "{dev}");
        }
    }

    #[test]
    fn attention_edge_cases() {
        let spec = attention();
        let params: ParamSet<f64> = spec.init_params(0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let one = spec.scores(&params, &random_x(&mut rng, 1, 8)).unwrap();
        assert!(one[0].is_finite());
        let mut x = random_x(&mut rng, 3, 8);
        let row = x.row(1).to_vec();
        for (j, v) in row.into_iter().enumerate() {
            x.set(2, j, v);
        }
        let s = spec.scores(&params, &x).unwrap();
        assert!((s[1] - s[2]).abs() < 1e-12);
        let empty = Tensor::<f64>::zeros(Shape::Matrix(0, 8));
        assert!(spec.scores(&params, &empty).is_err());
        assert!(spec.scores(&params, &random_x(&mut rng, 3, 5)).is_err());
    }

    #[test]
    fn zero_layer_attention_is_exactly_equivariant() {
        let spec = ModelSpec::Attention(AttentionSpec {
            layers: 0,
            ..AttentionSpec::toy(8)
        });
        let params: ParamSet<f64> = spec.init_params(4);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_x(&mut rng, 5, 8);
        let dev = check_equivariance(|x| spec.scores(&params, x), &x, 20, 4).unwrap();
        assert_eq!(dev, 0.0);
    }

    #[test]
    fn positional_model_is_caught() {
        let spec = mlp();
        let params: ParamSet<f64> = spec.init_params(3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_x(&mut rng, 6, 8);
        let positional = |x: &Tensor<f64>| -> Result<Vec<f64>> {
            let s = spec.scores(&params, x)?;
            Ok(s.iter().enumerate().map(|(i, v)| v + i as f64).collect())
        };
        let dev = check_equivariance(positional, &x, 20, 5).unwrap();
        assert!(dev > 0.5);
    }

    #[test]
    fn identity_model_reads_first_column() {
        let spec = ModelSpec::Identity;
        let params: ParamSet<f64> = spec.init_params(0);
        let x = Tensor::from_rows(&[vec![3.0, 9.0], vec![-1.0, 9.0]]).unwrap();
        assert_eq!(spec.scores(&params, &x).unwrap(), vec![3.0, -1.0]);
    }
}
