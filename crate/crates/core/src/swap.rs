//! Hard, soft and error-free swap functions on a pair of scalars.
//!
//! For inputs `(x, y)` with `σ_yx = σ(y - x)` and `σ_xy = σ(x - y)` the soft
//! swap returns
//!
//! ```text
//! lo = x·σ_yx + y·σ_xy        hi = x·σ_xy + y·σ_yx
//! ```
//!
//! The error-free swap returns exactly `(min, max)` in the forward pass and
//! the soft swap's gradients in the backward pass.

use serde::{Deserialize, Serialize};

use crate::adgraph::{Node, Pointwise, Tape};
use crate::error::{Error, Result};
use crate::sigmoid::SigmoidSpec;
use crate::sortnet::{PermMatrix, PermMode};
use crate::tensor::{Shape, Tensor};
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SwapMode {
    /// Rounded coefficients; forward only.
    Hard,
    Soft,
    ErrorFree,
}

impl SwapMode {
    pub fn name(self) -> &'static str {
        match self {
            SwapMode::Hard => "hard",
            SwapMode::Soft => "soft",
            SwapMode::ErrorFree => "error-free",
        }
    }

    pub fn perm_mode(self) -> PermMode {
        match self {
            SwapMode::Soft => PermMode::Soft,
            SwapMode::Hard | SwapMode::ErrorFree => PermMode::Hard,
        }
    }
}

impl std::fmt::Display for SwapMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SwapMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hard" => Ok(SwapMode::Hard),
            "soft" => Ok(SwapMode::Soft),
            "error-free" | "error_free" | "errorfree" => Ok(SwapMode::ErrorFree),
            other => Err(Error::invalid(format!("unknown swap mode `{other}`"))),
        }
    }
}

/// Result of one swap: the ordered pair and the two swap probabilities.
#[derive(Debug, Clone, Copy)]
pub struct SwapOutcome {
    pub lo: Node,
    pub hi: Node,
    /// `σ(y - x)`: weight of keeping the original order.
    pub p_keep: Node,
    /// `σ(x - y)`.
    pub p_swap: Node,
}

/// Entries of the 2x2 permutation block `[[keep, swap], [swap, keep]]`.
#[derive(Debug, Clone, Copy)]
pub struct SwapBlock {
    pub keep: Node,
    pub swap: Node,
}

/// Rounded `⌊σ(y - x)⌉`.
///
/// For any sigmoid that is strictly increasing with `σ(0) = 0.5` this is 1
/// exactly when `y >= x`; testing the difference directly avoids saturation
/// of `σ` near zero. Ties keep the original order.
#[inline]
pub fn keep_order<T: Real>(x: T, y: T) -> bool {
    y - x >= T::zero()
}

/// `(min(x, y), max(x, y))` computed from rounded sigmoid coefficients.
pub fn hard_swap<T: Real>(x: T, y: T) -> (T, T) {
    let keep = if keep_order(x, y) {
        T::one()
    } else {
        T::zero()
    };
    let swap = T::one() - keep;
    (x * keep + y * swap, x * swap + y * keep)
}

/// Soft swap on plain scalars; bit-identical to [`soft_swap`]'s forward pass.
pub fn soft_swap_values<T: Real>(x: T, y: T, spec: &SigmoidSpec<T>) -> (T, T) {
    let s_yx = spec.value(y - x);
    let s_xy = spec.value(x - y);
    (x * s_yx + y * s_xy, x * s_xy + y * s_yx)
}

pub fn soft_swap<T: Real>(
    tape: &mut Tape<T>,
    x: Node,
    y: Node,
    spec: &SigmoidSpec<T>,
) -> Result<SwapOutcome> {
    swap_with_block(tape, x, y, spec, SwapMode::Soft).map(|(o, _)| o)
}

pub fn error_free_swap<T: Real>(
    tape: &mut Tape<T>,
    x: Node,
    y: Node,
    spec: &SigmoidSpec<T>,
) -> Result<SwapOutcome> {
    swap_with_block(tape, x, y, spec, SwapMode::ErrorFree).map(|(o, _)| o)
}

/// Swap in any mode on scalar nodes, also returning the permutation block.
pub fn swap_with_block<T: Real>(
    tape: &mut Tape<T>,
    x: Node,
    y: Node,
    spec: &SigmoidSpec<T>,
    mode: SwapMode,
) -> Result<(SwapOutcome, SwapBlock)> {
    for n in [x, y] {
        if !tape.shape(n).is_scalar() {
            return Err(Error::invalid(format!(
                "swap inputs must be scalars, got {}",
                tape.shape(n)
            )));
        }
    }
    let (xv, yv) = (tape.item(x), tape.item(y));
    let (hard_lo, hard_hi) = hard_swap(xv, yv);
    let keep = if keep_order(xv, yv) {
        T::one()
    } else {
        T::zero()
    };

    if mode == SwapMode::Hard {
        let lo = tape.scalar(hard_lo);
        let hi = tape.scalar(hard_hi);
        let p_keep = tape.scalar(keep);
        let p_swap = tape.scalar(T::one() - keep);
        let outcome = SwapOutcome {
            lo,
            hi,
            p_keep,
            p_swap,
        };
        return Ok((
            outcome,
            SwapBlock {
                keep: p_keep,
                swap: p_swap,
            },
        ));
    }

    let d_yx = tape.sub(y, x)?;
    let d_xy = tape.sub(x, y)?;
    let s_yx = spec.eval(tape, d_yx);
    let s_xy = spec.eval(tape, d_xy);
    let a = tape.mul(x, s_yx)?;
    let b = tape.mul(y, s_xy)?;
    let soft_lo = tape.add(a, b)?;
    let a = tape.mul(x, s_xy)?;
    let b = tape.mul(y, s_yx)?;
    let soft_hi = tape.add(a, b)?;

    let outcome = |lo, hi| SwapOutcome {
        lo,
        hi,
        p_keep: s_yx,
        p_swap: s_xy,
    };
    match mode {
        SwapMode::Soft => Ok((
            outcome(soft_lo, soft_hi),
            SwapBlock {
                keep: s_yx,
                swap: s_xy,
            },
        )),
        SwapMode::ErrorFree => {
            let lo = tape.straight_through(Tensor::scalar(hard_lo), soft_lo)?;
            let hi = tape.straight_through(Tensor::scalar(hard_hi), soft_hi)?;
            let keep_st = tape.straight_through(Tensor::scalar(keep), s_yx)?;
            let swap_st = tape.straight_through(Tensor::scalar(T::one() - keep), s_xy)?;
            Ok((
                outcome(lo, hi),
                SwapBlock {
                    keep: keep_st,
                    swap: swap_st,
                },
            ))
        }
        SwapMode::Hard => unreachable!(),
    }
}

/// Gap between the produced minimum and the true minimum of `(x, y)`.
pub fn softening_error<T: Real>(x: T, y: T, spec: &SigmoidSpec<T>, mode: SwapMode) -> Result<T> {
    let mut tape = Tape::new();
    let (xn, yn) = (tape.scalar(x), tape.scalar(y));
    let (out, _) = swap_with_block(&mut tape, xn, yn, spec, mode)?;
    Ok(tape.item(out.lo) - x.min(y))
}

/// Applies a swap `k` times, feeding `(lo, hi)` back in. Entry `i` of the
/// result is the pair after `i + 1` swaps.
pub fn iterate_swaps<T: Real>(
    x: T,
    y: T,
    spec: &SigmoidSpec<T>,
    mode: SwapMode,
    k: usize,
) -> Result<Vec<(T, T)>> {
    if k == 0 {
        return Err(Error::invalid("iterate_swaps needs k >= 1"));
    }
    let mut pair = (x, y);
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        pair = match mode {
            SwapMode::Soft => soft_swap_values(pair.0, pair.1, spec),
            SwapMode::Hard | SwapMode::ErrorFree => hard_swap(pair.0, pair.1),
        };
        out.push(pair);
    }
    Ok(out)
}

/// 2x2 permutation matrix over `[x, y]`.
pub fn swap_perm_block<T: Real>(
    tape: &mut Tape<T>,
    x: Node,
    y: Node,
    spec: &SigmoidSpec<T>,
    mode: SwapMode,
) -> Result<PermMatrix> {
    let (_, block) = swap_with_block(tape, x, y, spec, mode)?;
    let node = tape.assemble(
        Tensor::zeros(Shape::Matrix(2, 2)),
        vec![
            (0, block.keep),
            (1, block.swap),
            (2, block.swap),
            (3, block.keep),
        ],
    )?;
    Ok(PermMatrix::new(node, 2, mode.perm_mode()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sigmoid::SigmoidKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec(kind: SigmoidKind, beta: f64) -> SigmoidSpec<f64> {
        SigmoidSpec::new(kind, beta).unwrap()
    }

    fn logistic() -> SigmoidSpec<f64> {
        spec(SigmoidKind::Logistic, 1.0)
    }

    fn sigma(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[test]
    fn hard_swap_examples() {
        assert_eq!(hard_swap(4.0, 0.0), (0.0, 4.0));
        assert_eq!(hard_swap(1.0, 1.0), (1.0, 1.0));
        assert_eq!(hard_swap(-2.5, 7.0), (-2.5, 7.0));
    }

    #[test]
    fn soft_swap_examples() {
        let mut t = Tape::new();
        let (x, y) = (t.scalar(0.0), t.scalar(1.0));
        let o = soft_swap(&mut t, x, y, &logistic()).unwrap();
        assert!((t.item(o.lo) - sigma(-1.0)).abs() < 1e-15);
        assert!((t.item(o.hi) - sigma(1.0)).abs() < 1e-15);
        assert!((t.item(o.lo) - 0.268941).abs() < 1e-6);

        let opt = spec(SigmoidKind::OptimalMonotonic, 1.0);
        let (x, y) = (t.scalar(4.0), t.scalar(0.0));
        let o = soft_swap(&mut t, x, y, &opt).unwrap();
        assert_eq!(t.item(o.lo), 0.0625);

        for kind in SigmoidKind::SUPPORTED {
            let c = t.scalar(2.5);
            let o = soft_swap(&mut t, c, c, &spec(kind, 3.0)).unwrap();
            assert_eq!((t.item(o.lo), t.item(o.hi)), (2.5, 2.5));
        }
    }

    #[test]
    fn soft_values_match_tape() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let (a, b): (f64, f64) = (rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0));
            let mut t = Tape::new();
            let (x, y) = (t.scalar(a), t.scalar(b));
            let o = soft_swap(&mut t, x, y, &logistic()).unwrap();
            let (lo, hi) = soft_swap_values(a, b, &logistic());
            assert_eq!(t.item(o.lo).to_bits(), lo.to_bits());
            assert_eq!(t.item(o.hi).to_bits(), hi.to_bits());
        }
    }

    fn grads(mode: SwapMode, a: f64, b: f64, s: &SigmoidSpec<f64>, w: (f64, f64)) -> [u64; 2] {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(a), true);
        let y = t.leaf(Tensor::scalar(b), true);
        let (o, _) = swap_with_block(&mut t, x, y, s, mode).unwrap();
        let lo = t.scale(o.lo, w.0);
        let hi = t.scale(o.hi, w.1);
        let out = t.add(lo, hi).unwrap();
        let g = t.backward(out).unwrap();
        [g.get(x).item().to_bits(), g.get(y).item().to_bits()]
    }

    #[test]
    fn error_free_forward_is_exact_and_gradients_are_soft() {
        let mut t = Tape::new();
        let (x, y) = (t.scalar(4.0), t.scalar(0.0));
        let o = error_free_swap(&mut t, x, y, &logistic()).unwrap();
        assert_eq!((t.item(o.lo), t.item(o.hi)), (0.0, 4.0));

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for kind in SigmoidKind::SUPPORTED {
            let s = spec(kind, 2.0);
            for _ in 0..200 {
                let a: f64 = rng.gen_range(-10.0..10.0);
                let b: f64 = rng.gen_range(-10.0..10.0);
                let w = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                assert_eq!(
                    grads(SwapMode::ErrorFree, a, b, &s, w),
                    grads(SwapMode::Soft, a, b, &s, w)
                );
                let mut t = Tape::new();
                let (x, y) = (t.scalar(a), t.scalar(b));
                let o = error_free_swap(&mut t, x, y, &s).unwrap();
                assert_eq!(t.item(o.lo), a.min(b));
                assert_eq!(t.item(o.hi), a.max(b));
                let sum = t.item(o.p_keep) + t.item(o.p_swap);
                assert!((sum - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn error_free_lo_gradient_at_ordered_pair() {
        // d lo / dx for lo = x σ(y-x) + y σ(x-y) at (0, 1): σ(1) - x σ'(1) + y σ'(-1)
        let s = logistic();
        let d = sigma(1.0) * (1.0 - sigma(1.0));
        let expected = sigma(1.0) + d;
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(0.0), true);
        let y = t.leaf(Tensor::scalar(1.0), true);
        let o = error_free_swap(&mut t, x, y, &s).unwrap();
        let g = t.backward(o.lo).unwrap();
        assert!((g.get(x).item() - expected).abs() < 1e-15);
    }

    #[test]
    fn error_free_tie_splits_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(1.5), true);
        let y = t.leaf(Tensor::scalar(1.5), true);
        let o = error_free_swap(&mut t, x, y, &logistic()).unwrap();
        assert_eq!((t.item(o.lo), t.item(o.hi)), (1.5, 1.5));
        let g = t.backward(o.lo).unwrap();
        // σ(0) = 1/2 plus ±1.5 σ'(0) terms that cancel
        assert_eq!(g.get(x).item(), 0.5);
        assert_eq!(g.get(y).item(), 0.5);
    }

    #[test]
    fn literal_stop_gradient_form_agrees() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = spec(SigmoidKind::Cauchy, 1.0);
        for _ in 0..100 {
            let (a, b): (f64, f64) = (rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0));
            let mut t = Tape::new();
            let x = t.leaf(Tensor::scalar(a), true);
            let y = t.leaf(Tensor::scalar(b), true);
            let soft = soft_swap(&mut t, x, y, &s).unwrap();
            let hard = t.scalar(a.min(b));
            let d = t.sub(hard, soft.lo).unwrap();
            let d = t.stop_gradient(d);
            let literal = t.add(d, soft.lo).unwrap();
            assert!((t.item(literal) - a.min(b)).abs() < 1e-12);
            let gl = t.backward(literal).unwrap();
            let fused = error_free_swap(&mut t, x, y, &s).unwrap();
            let gf = t.backward(fused.lo).unwrap();
            assert_eq!(gl.get(x), gf.get(x));
            assert_eq!(gl.get(y), gf.get(y));
        }
    }

    #[test]
    fn softening_error_examples() {
        let e = softening_error(0.0, 1.0, &logistic(), SwapMode::Soft).unwrap();
        assert!((e - 0.268941).abs() < 1e-6);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let (a, b) = (rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0));
            for kind in SigmoidKind::SUPPORTED {
                let s = spec(kind, 1.0);
                assert_eq!(softening_error(a, b, &s, SwapMode::ErrorFree).unwrap(), 0.0);
                assert_eq!(softening_error(a, b, &s, SwapMode::Hard).unwrap(), 0.0);
            }
        }
        assert_eq!(
            softening_error(3.0, 3.0, &logistic(), SwapMode::Soft).unwrap(),
            0.0
        );
    }

    #[test]
    fn softening_error_is_symmetric_and_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for kind in SigmoidKind::SUPPORTED {
            let s = spec(kind, 1.0);
            for _ in 0..200 {
                let (a, b): (f64, f64) = (rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0));
                let (lo, hi) = soft_swap_values(a, b, &s);
                let from_min = lo - a.min(b);
                let from_max = a.max(b) - hi;
                assert!((from_min - from_max).abs() < 1e-12);
                assert!(from_min > 0.0);
                assert!(lo <= hi);
            }
        }
    }

    #[test]
    fn softening_shrinks_with_distance() {
        // Relative to the gap: lo - min = d * σ(-βd), so error / d is σ(-βd).
        // The absolute error tends to 0 as d -> 0 and is not monotone.
        for kind in SigmoidKind::SUPPORTED {
            let s = spec(kind, 1.0);
            let errs: Vec<f64> = (1..=100)
                .map(|i| {
                    let d = i as f64 * 0.1;
                    softening_error(0.0, d, &s, SwapMode::Soft).unwrap() / d
                })
                .collect();
            for w in errs.windows(2) {
                assert!(w[1] <= w[0] + 1e-15, "{kind}: {w:?}");
            }
        }
    }

    #[test]
    fn iterate_examples() {
        let traj = iterate_swaps(4.0, 0.0, &logistic(), SwapMode::Soft, 1).unwrap();
        assert!((traj[0].0 - 4.0 * sigma(-4.0)).abs() < 1e-15);
        assert!((traj[0].0 - 0.071945).abs() < 1e-6);
        assert!((traj[0].1 - 3.928055).abs() < 1e-6);
        let flat = iterate_swaps(1.0, 1.0, &logistic(), SwapMode::Soft, 50).unwrap();
        assert!(flat.iter().all(|&p| p == (1.0, 1.0)));
        let ef = iterate_swaps(4.0, 0.0, &logistic(), SwapMode::ErrorFree, 50).unwrap();
        assert!(ef.iter().all(|&p| p == (0.0, 4.0)));
        assert!(iterate_swaps(4.0, 0.0, &logistic(), SwapMode::Soft, 0).is_err());
    }

    #[test]
    fn repeated_soft_swaps_meet_at_midpoint() {
        for kind in SigmoidKind::SUPPORTED {
            let traj = iterate_swaps(4.0, 0.0, &spec(kind, 1.0), SwapMode::Soft, 10_000).unwrap();
            let gaps: Vec<f64> = traj.iter().map(|(l, h)| h - l).collect();
            for w in gaps.windows(2) {
                if w[0] > 1e-9 {
                    assert!(w[1] < w[0], "{kind}: {w:?}");
                } else {
                    assert!(w[1] <= w[0] + 1e-15);
                }
            }
            let (lo, hi) = *traj.last().unwrap();
            assert!((hi - lo).abs() < 1e-6, "{kind}");
            assert!((lo - 2.0).abs() < 1e-6 && (hi - 2.0).abs() < 1e-6);
        }
    }

    #[test]
    fn cauchy_gap_steps() {
        // first swap count at which the gap drops below 1e-3
        let s = spec(SigmoidKind::Cauchy, 1.0);
        let first_below = |x: f64| {
            iterate_swaps(x, 0.0, &s, SwapMode::Soft, 100)
                .unwrap()
                .iter()
                .position(|(l, h)| h - l < 1e-3)
                .unwrap()
                + 1
        };
        assert_eq!(first_below(4.0), 9);
        assert!(first_below(8.0) > first_below(4.0));
    }

    #[test]
    fn perm_blocks() {
        let s = logistic();
        let mut t = Tape::new();
        let (x, y) = (t.scalar(0.0), t.scalar(1.0));
        let p = swap_perm_block(&mut t, x, y, &s, SwapMode::ErrorFree).unwrap();
        assert_eq!(t.value(p.node()).data(), &[1.0, 0.0, 0.0, 1.0]);
        let p = swap_perm_block(&mut t, y, x, &s, SwapMode::ErrorFree).unwrap();
        assert_eq!(t.value(p.node()).data(), &[0.0, 1.0, 1.0, 0.0]);
        let c = t.scalar(2.0);
        let p = swap_perm_block(&mut t, c, c, &s, SwapMode::Soft).unwrap();
        assert_eq!(t.value(p.node()).data(), &[0.5; 4]);
        let p = swap_perm_block(&mut t, c, c, &s, SwapMode::ErrorFree).unwrap();
        assert_eq!(t.value(p.node()).data(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn perm_blocks_are_doubly_stochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..200 {
            for mode in [SwapMode::Soft, SwapMode::ErrorFree] {
                let mut t = Tape::new();
                let x = t.scalar(rng.gen_range(-10.0..10.0));
                let y = t.scalar(rng.gen_range(-10.0..10.0));
                let p = swap_perm_block(&mut t, x, y, &logistic(), mode).unwrap();
                assert!(crate::permops::is_doubly_stochastic(
                    t.value(p.node()),
                    1e-12
                ));
            }
        }
    }
}
