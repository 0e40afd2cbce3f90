use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_cols, linear, BoundParams, ParamSet};
use crate::adgraph::{Node, Tape};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};
use crate::Real;

const LN_EPS: f64 = 1e-5;

/// Self-attention encoder without positional embeddings.
///
/// `Z₀ = relu(X W_e + b_e)`, then per layer
/// `Z ← LN(Z + mha(Z, Z, Z))` followed by `Z ← LN(Z + FFN(Z))`, and a final
/// row-wise affine map to one score per element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionSpec {
    pub input_dim: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub layers: usize,
    /// Width of the feed-forward sublayer; `0` means twice the embedding.
    #[serde(default)]
    pub ffn_dim: usize,
}

impl AttentionSpec {
    /// Two layers of two heads of width four.
    pub fn toy(input_dim: usize) -> Self {
        Self {
            input_dim,
            heads: 2,
            head_dim: 4,
            layers: 2,
            ffn_dim: 0,
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.heads * self.head_dim
    }

    fn ffn_width(&self) -> usize {
        if self.ffn_dim == 0 {
            2 * self.embed_dim()
        } else {
            self.ffn_dim
        }
    }

    pub fn init_params<T: Real>(&self, seed: u64) -> ParamSet<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::empty(seed);
        let (d, e, m, f) = (
            self.input_dim,
            self.embed_dim(),
            self.head_dim,
            self.ffn_width(),
        );
        p.push_uniform("embed.weight", Shape::Matrix(d, e), d, &mut rng);
        p.push_uniform("embed.bias", Shape::Vector(e), d, &mut rng);
        for l in 0..self.layers {
            for h in 0..self.heads {
                for w in ["wq", "wk", "wv"] {
                    p.push_uniform(format!("l{l}.h{h}.{w}"), Shape::Matrix(e, m), e, &mut rng);
                }
            }
            p.push_uniform(format!("l{l}.wo"), Shape::Matrix(e, e), e, &mut rng);
            p.push(
                format!("l{l}.ln1.gain"),
                Tensor::filled(Shape::Vector(e), T::one()),
            );
            p.push(format!("l{l}.ln1.bias"), Tensor::zeros(Shape::Vector(e)));
            p.push_uniform(
                format!("l{l}.ffn1.weight"),
                Shape::Matrix(e, f),
                e,
                &mut rng,
            );
            p.push_uniform(format!("l{l}.ffn1.bias"), Shape::Vector(f), e, &mut rng);
            p.push_uniform(
                format!("l{l}.ffn2.weight"),
                Shape::Matrix(f, e),
                f,
                &mut rng,
            );
            p.push_uniform(format!("l{l}.ffn2.bias"), Shape::Vector(e), f, &mut rng);
            p.push(
                format!("l{l}.ln2.gain"),
                Tensor::filled(Shape::Vector(e), T::one()),
            );
            p.push(format!("l{l}.ln2.bias"), Tensor::zeros(Shape::Vector(e)));
        }
        p.push_uniform("out.weight", Shape::Matrix(e, 1), e, &mut rng);
        p.push_uniform("out.bias", Shape::Vector(1), e, &mut rng);
        p
    }

    /// `[head_1, …, head_h] W_o` with `head_i = softmax(Q_i K_iᵀ / √d_m) V_i`.
    fn mha<T: Real>(
        &self,
        tape: &mut Tape<T>,
        params: &BoundParams,
        z: Node,
        l: usize,
    ) -> Result<Node> {
        let scale = T::one() / T::of(self.head_dim as f64).sqrt();
        let mut heads = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let wq = params.get(&format!("l{l}.h{h}.wq"))?;
            let wk = params.get(&format!("l{l}.h{h}.wk"))?;
            let wv = params.get(&format!("l{l}.h{h}.wv"))?;
            let q = tape.matmul(z, wq)?;
            let k = tape.matmul(z, wk)?;
            let v = tape.matmul(z, wv)?;
            let kt = tape.transpose(k)?;
            let logits = tape.matmul(q, kt)?;
            let logits = tape.scale(logits, scale);
            let attn = tape.softmax_rows(logits);
            heads.push(tape.matmul(attn, v)?);
        }
        let cat = tape.concat_cols(&heads)?;
        let wo = params.get(&format!("l{l}.wo"))?;
        tape.matmul(cat, wo)
    }

    fn add_norm<T: Real>(
        &self,
        tape: &mut Tape<T>,
        params: &BoundParams,
        z: Node,
        update: Node,
        name: &str,
    ) -> Result<Node> {
        let sum = tape.add(z, update)?;
        let gain = params.get(&format!("{name}.gain"))?;
        let bias = params.get(&format!("{name}.bias"))?;
        tape.layer_norm_rows(sum, gain, bias, T::of(LN_EPS))
    }

    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        params: &BoundParams,
        x: Node,
    ) -> Result<Node> {
        let n = check_cols(tape, x, self.input_dim)?;
        if n == 0 {
            return Err(Error::invalid(
                "attention encoder needs at least one element",
            ));
        }
        let z = linear(tape, params, x, "embed")?;
        let mut z = tape.relu(z);
        for l in 0..self.layers {
            let a = self.mha(tape, params, z, l)?;
            z = self.add_norm(tape, params, z, a, &format!("l{l}.ln1"))?;
            let f = linear(tape, params, z, &format!("l{l}.ffn1"))?;
            let f = tape.relu(f);
            let f = linear(tape, params, f, &format!("l{l}.ffn2"))?;
            z = self.add_norm(tape, params, z, f, &format!("l{l}.ln2"))?;
        }
        let s = linear(tape, params, z, "out")?;
        tape.reshape(s, Shape::Vector(n))
    }
}
