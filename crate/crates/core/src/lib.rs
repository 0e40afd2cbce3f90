//! Differentiable sorting networks with error-free swap functions.
//!
//! The crate is organised bottom-up:
//!
//! - [`adgraph`]: a small reverse-mode autodiff tape over dense arrays,
//!   including a stop-gradient and a fused straight-through primitive.
//! - [`sigmoid`]: the monotone sigmoid family used by relaxed comparators.
//! - [`swap`]: hard, soft and error-free swap functions on pairs.
//! - [`sortnet`]: odd-even transposition networks and composed permutation
//!   matrices.
//! - [`permops`]: ground-truth permutations, argsort, accuracy metrics and
//!   splitting of hard permutations.
//! - [`models`]: permutation-equivariant scorers (instance-wise MLP and a
//!   position-free attention encoder).
//! - [`training`]: losses, AdamW, synthetic tasks and the training loop.
//! - [`checks`] and [`cli`]: property suites and the `neusort` command line.
//!
//! Everything numeric is generic over [`Real`]; the aliases below pin the
//! default 64-bit instantiation.

// NaN-rejecting guards are written as negated comparisons on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adgraph;
pub mod checks;
pub mod cli;
pub mod error;
pub mod models;
pub mod permops;
pub mod sigmoid;
pub mod sortnet;
pub mod swap;
pub mod tensor;
pub mod training;

use std::fmt::{Debug, Display};

pub use error::{Error, Result};

/// Scalar type the whole library is generic over (`f32` or `f64`).
pub trait Real:
    num_traits::Float
    + num_traits::FloatConst
    + num_traits::FromPrimitive
    + num_traits::NumAssign
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal into this scalar type.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite conversion to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

pub type Tensor64 = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Tape64 = adgraph::Tape<f64>;
pub type Tape32 = adgraph::Tape<f32>;
pub type SigmoidSpec64 = sigmoid::SigmoidSpec<f64>;
pub type SigmoidSpec32 = sigmoid::SigmoidSpec<f32>;
pub type ParamSet64 = models::ParamSet<f64>;
pub type TrainConfig64 = training::TrainConfig<f64>;

pub use adgraph::{Node, Tape};
pub use permops::{GroundTruth, Ranking};
pub use sigmoid::{SigmoidKind, SigmoidSpec};
pub use sortnet::{PermMatrix, PermMode, WirePlan};
pub use swap::{SwapMode, SwapOutcome};
pub use tensor::{Shape, Tensor};
