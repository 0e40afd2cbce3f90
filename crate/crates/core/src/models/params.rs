use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::adgraph::{Node, Tape};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};
use crate::Real;

/// Named model parameters in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
    seed: u64,
}

impl<T: Real> ParamSet<T> {
    pub fn empty(seed: u64) -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
            seed,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor<T>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.values
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.values[i])
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor<T>) {
        self.names.push(name.into());
        self.values.push(value);
    }

    /// Adds a parameter drawn from `U(-a, a)` with `a = 1/√fan_in`.
    pub(crate) fn push_uniform(
        &mut self,
        name: impl Into<String>,
        shape: Shape,
        fan_in: usize,
        rng: &mut ChaCha8Rng,
    ) {
        let a = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data = (0..shape.len())
            .map(|_| T::of(rng.gen_range(-a..a)))
            .collect();
        self.push(name, Tensor::new(shape, data).expect("shape"));
    }

    /// Records every parameter as a leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape<T>, requires_grad: bool) -> BoundParams {
        let nodes = self
            .values
            .iter()
            .map(|v| tape.leaf(v.clone(), requires_grad))
            .collect();
        self.attach(nodes).expect("one node per parameter")
    }

    /// Names existing nodes after this set's parameters, in order.
    pub fn attach(&self, nodes: Vec<Node>) -> Result<BoundParams> {
        if nodes.len() != self.values.len() {
            return Err(Error::invalid(format!(
                "{} nodes for {} parameters",
                nodes.len(),
                self.values.len()
            )));
        }
        Ok(BoundParams {
            nodes,
            index: self
                .names
                .iter()
                .enumerate()
                .map(|(i, n)| (n.clone(), i))
                .collect(),
        })
    }
}

/// Parameter leaves on a particular tape.
pub struct BoundParams {
    nodes: Vec<Node>,
    index: HashMap<String, usize>,
}

impl BoundParams {
    pub fn get(&self, name: &str) -> Result<Node> {
        self.index
            .get(name)
            .map(|&i| self.nodes[i])
            .ok_or_else(|| Error::invalid(format!("no parameter named `{name}`")))
    }

    /// Leaves in [`ParamSet`] order.
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }
}
