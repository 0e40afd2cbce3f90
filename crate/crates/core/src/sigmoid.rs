//! Monotone sigmoids `σ: ℝ → [0, 1]` with steepness `β`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adgraph::{Node, Pointwise, Tape};
use crate::error::{Error, Result};
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmoidKind {
    Logistic,
    /// Registered for name parsing only; constructing a spec with it fails.
    LogisticArt,
    Reciprocal,
    Cauchy,
    #[serde(rename = "optimal")]
    OptimalMonotonic,
}

impl SigmoidKind {
    /// Kinds that can actually be evaluated.
    pub const SUPPORTED: [SigmoidKind; 4] = [
        SigmoidKind::Logistic,
        SigmoidKind::Reciprocal,
        SigmoidKind::Cauchy,
        SigmoidKind::OptimalMonotonic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SigmoidKind::Logistic => "logistic",
            SigmoidKind::LogisticArt => "logistic_art",
            SigmoidKind::Reciprocal => "reciprocal",
            SigmoidKind::Cauchy => "cauchy",
            SigmoidKind::OptimalMonotonic => "optimal",
        }
    }
}

impl fmt::Display for SigmoidKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SigmoidKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logistic" => Ok(SigmoidKind::Logistic),
            "logistic_art" => Ok(SigmoidKind::LogisticArt),
            "reciprocal" => Ok(SigmoidKind::Reciprocal),
            "cauchy" => Ok(SigmoidKind::Cauchy),
            "optimal" => Ok(SigmoidKind::OptimalMonotonic),
            other => Err(Error::UnsupportedSigmoid(other.to_string())),
        }
    }
}

/// A sigmoid kind together with its steepness `β > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmoidSpec<T> {
    kind: SigmoidKind,
    beta: T,
}

impl<T: Real> SigmoidSpec<T> {
    pub fn new(kind: SigmoidKind, beta: T) -> Result<Self> {
        if kind == SigmoidKind::LogisticArt {
            return Err(Error::UnsupportedSigmoid(
                "logistic_art (its input transform is not implemented)".into(),
            ));
        }
        if !(beta > T::zero()) || !beta.is_finite() {
            return Err(Error::invalid(format!(
                "steepness must be positive, got {beta}"
            )));
        }
        Ok(Self { kind, beta })
    }

    pub fn kind(&self) -> SigmoidKind {
        self.kind
    }

    pub fn beta(&self) -> T {
        self.beta
    }

    /// `σ(x)` as a tape node.
    pub fn eval(&self, tape: &mut Tape<T>, x: Node) -> Node {
        tape.map(x, Arc::new(*self))
    }

    /// Largest deviation from the limits at `|x| = bound` implied by the
    /// closed-form tail of this kind.
    pub fn tail_delta(&self, bound: T) -> T {
        let u = self.beta * bound;
        let half = T::of(0.5);
        match self.kind {
            SigmoidKind::Logistic => T::one() / (T::one() + u.exp()),
            SigmoidKind::Reciprocal => half / (T::one() + u),
            SigmoidKind::Cauchy => half - u.atan() / T::PI(),
            SigmoidKind::OptimalMonotonic => {
                if u > T::of(0.25) {
                    T::one() / (T::of(16.0) * u)
                } else {
                    half - u
                }
            }
            SigmoidKind::LogisticArt => unreachable!("rejected by SigmoidSpec::new"),
        }
    }

    /// Checks the five sigmoid axioms for this spec.
    pub fn verify_axioms(&self, samples: usize, range: (T, T), seed: u64) -> AxiomReport {
        let delta = self.tail_delta(range.1.abs().min(range.0.abs()));
        verify_sigmoid_axioms(|x| self.value(x), delta, samples, range, seed)
    }
}

impl<T: Real> Pointwise<T> for SigmoidSpec<T> {
    fn value(&self, x: T) -> T {
        let u = self.beta * x;
        let half = T::of(0.5);
        match self.kind {
            SigmoidKind::Logistic => half + half * (half * u).tanh(),
            SigmoidKind::Reciprocal => half * u / (T::one() + u.abs()) + half,
            SigmoidKind::Cauchy => u.atan() / T::PI() + half,
            SigmoidKind::OptimalMonotonic => {
                let knot = T::of(0.25);
                let tail = T::one() / (T::of(16.0) * u);
                if u < -knot {
                    -tail
                } else if u > knot {
                    T::one() - tail
                } else {
                    u + half
                }
            }
            SigmoidKind::LogisticArt => unreachable!("rejected by SigmoidSpec::new"),
        }
    }

    fn derivative(&self, x: T) -> T {
        let b = self.beta;
        let u = b * x;
        match self.kind {
            SigmoidKind::Logistic => {
                let s = self.value(x);
                b * s * (T::one() - s)
            }
            SigmoidKind::Reciprocal => {
                let d = T::one() + u.abs();
                T::of(0.5) * b / (d * d)
            }
            SigmoidKind::Cauchy => b / (T::PI() * (T::one() + u * u)),
            SigmoidKind::OptimalMonotonic => {
                if u.abs() > T::of(0.25) {
                    b / (T::of(16.0) * u * u)
                } else {
                    b
                }
            }
            SigmoidKind::LogisticArt => unreachable!("rejected by SigmoidSpec::new"),
        }
    }
}

/// Pass/fail per axiom: (i) non-decreasing, (ii) upper limit 1,
/// (iii) lower limit 0, (iv) `σ(0) = 0.5`, (v) `σ(x) = 1 - σ(-x)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AxiomReport {
    pub non_decreasing: bool,
    pub upper_limit: bool,
    pub lower_limit: bool,
    pub half_at_zero: bool,
    pub symmetric: bool,
}

impl AxiomReport {
    pub fn all_pass(&self) -> bool {
        self.non_decreasing
            && self.upper_limit
            && self.lower_limit
            && self.half_at_zero
            && self.symmetric
    }
}

/// Checks the sigmoid axioms for an arbitrary function on a sorted random
/// grid over `range`. The limit axioms accept values within `tail_delta` of
/// 0 and 1 at the ends of the range.
pub fn verify_sigmoid_axioms<T: Real>(
    f: impl Fn(T) -> T,
    tail_delta: T,
    samples: usize,
    range: (T, T),
    seed: u64,
) -> AxiomReport {
    let tol = T::epsilon() * T::of(64.0);
    let (lo, hi) = range;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut grid: Vec<T> = (0..samples.max(2))
        .map(|_| T::of(rng.gen_range(lo.as_f64()..=hi.as_f64())))
        .collect();
    grid.push(lo);
    grid.push(hi);
    grid.push(T::zero());
    grid.sort_by(|a, b| a.partial_cmp(b).expect("finite grid"));
    let values: Vec<T> = grid.iter().map(|&x| f(x)).collect();

    AxiomReport {
        non_decreasing: values.windows(2).all(|w| w[1] >= w[0]),
        upper_limit: f(hi) >= T::one() - tail_delta - tol,
        lower_limit: f(lo) <= tail_delta + tol,
        half_at_zero: (f(T::zero()) - T::of(0.5)).abs() <= tol,
        symmetric: grid.iter().all(|&x| (f(x) + f(-x) - T::one()).abs() <= tol),
    }
}
