use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_cols, linear, BoundParams, ParamSet};
use crate::adgraph::{Node, Tape};
use crate::error::Result;
use crate::tensor::Shape;
use crate::Real;

/// Instance-wise MLP `d → hidden… → 1` with ReLU activations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden: Vec<usize>) -> Self {
        Self { input_dim, hidden }
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim];
        w.extend(&self.hidden);
        w.push(1);
        w
    }

    pub fn init_params<T: Real>(&self, seed: u64) -> ParamSet<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::empty(seed);
        for (l, w) in self.widths().windows(2).enumerate() {
            params.push_uniform(
                format!("layer{l}.weight"),
                Shape::Matrix(w[0], w[1]),
                w[0],
                &mut rng,
            );
            params.push_uniform(
                format!("layer{l}.bias"),
                Shape::Vector(w[1]),
                w[0],
                &mut rng,
            );
        }
        params
    }

    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        params: &BoundParams,
        x: Node,
    ) -> Result<Node> {
        let n = check_cols(tape, x, self.input_dim)?;
        let layers = self.hidden.len() + 1;
        let mut h = x;
        for l in 0..layers {
            h = linear(tape, params, h, &format!("layer{l}"))?;
            if l + 1 < layers {
                h = tape.relu(h);
            }
        }
        tape.reshape(h, Shape::Vector(n))
    }
}
