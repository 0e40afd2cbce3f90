use super::{Node, Tape};
use crate::error::Result;
use crate::tensor::Tensor;
use crate::Real;

/// Compares reverse-mode gradients of a scalar function with central
/// differences.
///
/// `f` builds the function on a fresh tape from one leaf per entry of
/// `point`. Returns the largest `|analytic - numeric| / max(1, |analytic|)`
/// over every coordinate of every input.
pub fn grad_check<T, F>(f: F, point: &[Tensor<T>], h: T) -> Result<T>
where
    T: Real,
    F: Fn(&mut Tape<T>, &[Node]) -> Result<Node>,
{
    let mut tape = Tape::new();
    let leaves: Vec<Node> = point.iter().map(|v| tape.leaf(v.clone(), true)).collect();
    let out = f(&mut tape, &leaves)?;
    let grads = tape.backward(out)?;

    let eval = |inputs: &[Tensor<T>]| -> Result<T> {
        let mut tape = Tape::new();
        let leaves: Vec<Node> = inputs.iter().map(|v| tape.constant(v.clone())).collect();
        let out = f(&mut tape, &leaves)?;
        Ok(tape.item(out))
    };

    let two_h = h + h;
    let mut worst = T::zero();
    let mut shifted = point.to_vec();
    for (k, leaf) in leaves.iter().enumerate() {
        let analytic = grads.get(*leaf);
        for i in 0..point[k].len() {
            let x0 = point[k].data()[i];
            shifted[k].data_mut()[i] = x0 + h;
            let up = eval(&shifted)?;
            shifted[k].data_mut()[i] = x0 - h;
            let down = eval(&shifted)?;
            shifted[k].data_mut()[i] = x0;
            let numeric = (up - down) / two_h;
            let a = analytic.data()[i];
            let err = (a - numeric).abs() / T::one().max(a.abs());
            if err > worst || err.is_nan() {
                worst = err;
            }
        }
    }
    Ok(worst)
}
