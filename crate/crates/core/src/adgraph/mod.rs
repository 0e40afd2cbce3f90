//! Reverse-mode automatic differentiation over small dense arrays.
//!
//! A [`Tape`] owns every value of one computation. Operations append a record
//! and hand back a [`Node`]; [`Tape::backward`] walks the records in reverse
//! creation order and accumulates gradients by summation, so results are
//! deterministic. Only first-order derivatives are supported.

mod gradcheck;
mod tape;

pub use gradcheck::grad_check;
pub use tape::{Binary, Gradients, Node, Pointwise, Tape, Unary};
