//! Gradient and property suites behind the `gradcheck` and `props`
//! commands.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::adgraph::{grad_check, Tape};
use crate::error::Result;
use crate::models::{check_equivariance, AttentionSpec, MlpSpec, ModelSpec, ParamSet};
use crate::permops::{is_doubly_stochastic, is_hard_permutation, split_hard_permutation};
use crate::sigmoid::{SigmoidKind, SigmoidSpec};
use crate::sortnet::{execute, stage_permutation, unstack, PermMatrix, PermMode, WirePlan};
use crate::swap::{iterate_swaps, soft_swap, SwapMode};
use crate::tensor::{Shape, Tensor};
use crate::training::{
    gen_task, loss_hard, loss_soft, sequence_loss, EvalSettings, Sample, SyntheticTask,
};

/// Relative error bound for every gradient check.
pub const GRAD_TOL: f64 = 1e-4;
/// Finite-difference step for every gradient check.
pub const GRAD_STEP: f64 = 1e-5;

/// One named check: the measured value and the bound it must stay under
/// (or, for boolean checks, 1 for pass and 0 for fail against 0.5).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub bound: f64,
}

impl CheckOutcome {
    fn below(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            passed: value < bound,
            value,
            bound,
        }
    }

    fn flag(name: impl Into<String>, ok: bool) -> Self {
        Self {
            name: name.into(),
            passed: ok,
            value: if ok { 1.0 } else { 0.0 },
            bound: 0.5,
        }
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: Shape, range: f64) -> Tensor<f64> {
    let data = (0..shape.len())
        .map(|_| rng.gen_range(-range..range))
        .collect();
    Tensor::new(shape, data).expect("shape")
}

/// Random vector of length `n` where roughly a third of the entries are
/// drawn from a small integer grid, so ties are common.
pub fn vector_with_duplicates(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            if rng.gen_bool(0.3) {
                rng.gen_range(-3i32..=3) as f64
            } else {
                rng.gen_range(-10.0..10.0)
            }
        })
        .collect()
}

fn spec(kind: SigmoidKind, beta: f64) -> SigmoidSpec<f64> {
    SigmoidSpec::new(kind, beta).expect("supported kind")
}

/// Finite-difference checks of every differentiable building block.
pub fn gradcheck_suite(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = GRAD_STEP;
    let mut out = Vec::new();

    for kind in SigmoidKind::SUPPORTED {
        let s = spec(kind, 1.0);
        let mut points: Vec<f64> = (0..50).map(|_| rng.gen_range(-5.0..5.0)).collect();
        points.extend([0.25, -0.25, 0.0]);
        let mut worst: f64 = 0.0;
        for x in points {
            let err = grad_check(|t, p| Ok(s.eval(t, p[0])), &[Tensor::scalar(x)], h)?;
            worst = worst.max(err);
        }
        out.push(CheckOutcome::below(
            format!("sigmoid_{}", kind.name()),
            worst,
            GRAD_TOL,
        ));
    }

    for kind in SigmoidKind::SUPPORTED {
        let s = spec(kind, 2.0);
        let mut worst: f64 = 0.0;
        for _ in 0..20 {
            let p = [
                Tensor::scalar(rng.gen_range(-3.0..3.0)),
                Tensor::scalar(rng.gen_range(-3.0..3.0)),
            ];
            let (w1, w2) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let err = grad_check(
                |t, n| {
                    let o = soft_swap(t, n[0], n[1], &s)?;
                    let a = t.scale(o.lo, w1);
                    let b = t.scale(o.hi, w2);
                    t.add(a, b)
                },
                &p,
                h,
            )?;
            worst = worst.max(err);
        }
        out.push(CheckOutcome::below(
            format!("soft_swap_{}", kind.name()),
            worst,
            GRAD_TOL,
        ));
    }

    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let raw = rand_tensor(&mut rng, Shape::Matrix(4, 4), 1.0).map(|v| 0.5 + 0.4 * v);
        let gt = crate::permops::gt_permutation(&vector_with_duplicates(&mut rng, 4)).perm;
        let err = grad_check(
            |t, n| loss_soft(t, &PermMatrix::new(n[0], 4, PermMode::Soft), &gt),
            &[raw],
            h,
        )?;
        worst = worst.max(err);
    }
    out.push(CheckOutcome::below("loss_soft", worst, GRAD_TOL));

    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let p = rand_tensor(&mut rng, Shape::Matrix(4, 4), 1.0);
        let x = rand_tensor(&mut rng, Shape::Matrix(4, 3), 2.0);
        let gt = crate::permops::gt_permutation(&vector_with_duplicates(&mut rng, 4)).perm;
        let err = grad_check(
            |t, n| loss_hard(t, &PermMatrix::new(n[0], 4, PermMode::Hard), &gt, n[1]),
            &[p, x],
            h,
        )?;
        worst = worst.max(err);
    }
    out.push(CheckOutcome::below("loss_hard", worst, GRAD_TOL));

    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let a = rand_tensor(&mut rng, Shape::Matrix(3, 4), 2.0);
        let w = rand_tensor(&mut rng, Shape::Matrix(3, 4), 1.0);
        let err = grad_check(
            |t, n| {
                let s = t.softmax_rows(n[0]);
                let wn = t.constant(w.clone());
                let m = t.mul(s, wn)?;
                Ok(t.sum(m))
            },
            &[a],
            h,
        )?;
        worst = worst.max(err);
    }
    out.push(CheckOutcome::below("softmax_rows", worst, GRAD_TOL));

    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let a = rand_tensor(&mut rng, Shape::Matrix(3, 4), 2.0);
        let gain = rand_tensor(&mut rng, Shape::Vector(4), 1.0);
        let bias = rand_tensor(&mut rng, Shape::Vector(4), 1.0);
        let w = rand_tensor(&mut rng, Shape::Matrix(3, 4), 1.0);
        let err = grad_check(
            |t, n| {
                let y = t.layer_norm_rows(n[0], n[1], n[2], 1e-5)?;
                let wn = t.constant(w.clone());
                let m = t.mul(y, wn)?;
                Ok(t.sum(m))
            },
            &[a, gain, bias],
            h,
        )?;
        worst = worst.max(err);
    }
    out.push(CheckOutcome::below("layer_norm_rows", worst, GRAD_TOL));

    let s = spec(SigmoidKind::Logistic, 1.0);
    let plan = WirePlan::odd_even(5)?;
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let v = rand_tensor(&mut rng, Shape::Vector(5), 3.0);
        let w = rand_tensor(&mut rng, Shape::Matrix(5, 5), 1.0);
        let err = grad_check(
            |t, n| {
                let (_, p) = execute(t, &plan, n[0], &s, SwapMode::Soft)?;
                let wn = t.constant(w.clone());
                let m = t.mul(p.node(), wn)?;
                Ok(t.sum(m))
            },
            &[v],
            h,
        )?;
        worst = worst.max(err);
    }
    out.push(CheckOutcome::below("soft_network", worst, GRAD_TOL));

    out.push(CheckOutcome::below(
        "tiny_model_end_to_end",
        tiny_model_error(seed)?,
        GRAD_TOL,
    ));
    Ok(out)
}

/// Combined loss of an MLP with one hidden unit on three sequences of
/// three 2-d elements, differentiated with respect to its parameters. The
/// hard term runs through the soft network so the loss is smooth.
pub fn tiny_model_error(seed: u64) -> Result<f64> {
    let model = ModelSpec::Mlp(MlpSpec::new(2, vec![1]));
    let init: ParamSet<f64> = model.init_params(seed);
    let task = SyntheticTask::vector(2, seed)?;
    let samples: Vec<Sample<f64>> = gen_task(&task, 3, 3, seed)?;
    let plan = WirePlan::odd_even(3)?;
    let settings = EvalSettings {
        spec: spec(SigmoidKind::Logistic, 2.0),
        mode: SwapMode::ErrorFree,
        lambda: 0.1,
        split_hard: false,
        hard_term: SwapMode::Soft,
    };
    grad_check(
        |tape, leaves| {
            let bound = init.attach(leaves.to_vec())?;
            let mut total = tape.scalar(0.0);
            for s in &samples {
                let (_, parts, _) = sequence_loss(tape, &model, &bound, &plan, s, &settings)?;
                total = tape.add(total, parts.total)?;
            }
            Ok(total)
        },
        init.values(),
        GRAD_STEP,
    )
}

/// Composed permutations are doubly stochastic (and exact permutations in
/// hard and error-free mode). Returns the failing trial count per mode.
pub fn doubly_stochastic_failures(
    mode: SwapMode,
    trials: usize,
    max_n: usize,
    seed: u64,
) -> Result<usize> {
    let s = spec(SigmoidKind::OptimalMonotonic, 1.0);
    let tol = if mode == SwapMode::Soft { 1e-6 } else { 1e-9 };
    let fails: Vec<bool> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x2545_F491_4F6C_DD1D));
            let n = rng.gen_range(1..=max_n);
            let plan = WirePlan::odd_even(n)?;
            let mut tape = Tape::new();
            let v = tape.constant(Tensor::vector(vector_with_duplicates(&mut rng, n)));
            let (_, p) = execute(&mut tape, &plan, v, &s, mode)?;
            let values = p.values(&tape);
            let ok = is_doubly_stochastic(values, tol)
                && (mode == SwapMode::Soft || is_hard_permutation(values));
            Ok(!ok)
        })
        .collect::<Result<_>>()?;
    Ok(fails.into_iter().filter(|&f| f).count())
}

/// Error-free forward output differs from a comparison sort, counted over
/// random vectors with duplicates.
pub fn exact_forward_failures(trials: usize, max_n: usize, seed: u64) -> Result<usize> {
    let s = spec(SigmoidKind::OptimalMonotonic, 20.0);
    let fails: Vec<bool> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let n = rng.gen_range(1..=max_n);
            let values = vector_with_duplicates(&mut rng, n);
            let mut oracle = values.clone();
            oracle.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
            let plan = WirePlan::odd_even(n)?;
            let mut tape = Tape::new();
            let v = tape.constant(Tensor::vector(values));
            let (out, p) = execute(&mut tape, &plan, v, &s, SwapMode::ErrorFree)?;
            let direct = tape.value(out).data();
            let pt = p.values(&tape).transpose().matmul(tape.value(v))?;
            let bits = |xs: &[f64]| xs.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            Ok(bits(direct) != bits(&oracle) || bits(pt.data()) != bits(&oracle))
        })
        .collect::<Result<_>>()?;
    Ok(fails.into_iter().filter(|&f| f).count())
}

/// Feeds identical stage inputs through one soft and one error-free stage
/// and back-propagates the same cotangent; counts trials whose input
/// gradients are not bit-identical.
pub fn stage_gradient_mismatches(trials: usize, max_n: usize, seed: u64) -> Result<usize> {
    let fails: Vec<bool> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93));
            let n = rng.gen_range(2..=max_n);
            let kind = *SigmoidKind::SUPPORTED.choose(&mut rng).expect("non-empty");
            let s = spec(kind, rng.gen_range(0.5..30.0));
            let plan = WirePlan::odd_even(n)?;
            let stage = plan.stages()[rng.gen_range(0..plan.stages().len())].clone();
            let values = Tensor::vector(vector_with_duplicates(&mut rng, n));
            let w_out = rand_tensor(&mut rng, Shape::Vector(n), 1.0);
            let w_p = rand_tensor(&mut rng, Shape::Matrix(n, n), 1.0);
            let grad = |mode: SwapMode| -> Result<Vec<u64>> {
                let mut tape = Tape::new();
                let v = tape.leaf(values.clone(), true);
                let parts = unstack(&mut tape, v)?;
                let (outs, p) = stage_permutation(&mut tape, &stage, &parts, &s, mode)?;
                let stacked = tape.stack(&outs)?;
                let a = tape.constant(w_out.clone());
                let b = tape.constant(w_p.clone());
                let x = tape.mul(stacked, a)?;
                let y = tape.mul(p.node(), b)?;
                let (x, y) = (tape.sum(x), tape.sum(y));
                let l = tape.add(x, y)?;
                let g = tape.backward(l)?.get(v);
                Ok(g.data().iter().map(|x| x.to_bits()).collect())
            };
            Ok(grad(SwapMode::Soft)? != grad(SwapMode::ErrorFree)?)
        })
        .collect::<Result<_>>()?;
    Ok(fails.into_iter().filter(|&f| f).count())
}

/// Splitting random hard permutations: counts cases where a sub-block is
/// not a permutation or does not sort its half.
pub fn split_failures(trials: usize, max_n: usize, seed: u64) -> Result<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fails = 0;
    for _ in 0..trials {
        let n = rng.gen_range(2..=max_n);
        let n1 = rng.gen_range(0..=n);
        let values = vector_with_duplicates(&mut rng, n);
        let gt = crate::permops::gt_permutation(&values).perm;
        let (p1, p2) = split_hard_permutation(&gt, n1, n - n1)?;
        for (block, half) in [(p1, &values[..n1]), (p2, &values[n1..])] {
            if half.is_empty() {
                continue;
            }
            let sorted = block.transpose().matmul(&Tensor::vector(half.to_vec()))?;
            let mut oracle = half.to_vec();
            oracle.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
            if !is_hard_permutation(&block) || sorted.data() != oracle.as_slice() {
                fails += 1;
            }
        }
    }
    Ok(fails)
}

/// Largest deviation of the scorer under random row permutations.
pub fn equivariance_error(model: &ModelSpec, trials: usize, seed: u64) -> Result<f64> {
    let params: ParamSet<f64> = model.init_params(seed);
    let d = model.input_dim().unwrap_or(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = rand_tensor(&mut rng, Shape::Matrix(7, d), 2.0);
    check_equivariance(|x| model.scores(&params, x), &x, trials, seed)
}

/// Every property suite.
pub fn props_suite(trials: usize, seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    for kind in SigmoidKind::SUPPORTED {
        let report = spec(kind, 1.0).verify_axioms(10_000, (-100.0, 100.0), seed);
        out.push(CheckOutcome::flag(
            format!("axioms_{}", kind.name()),
            report.all_pass(),
        ));
    }
    for mode in [SwapMode::Hard, SwapMode::Soft, SwapMode::ErrorFree] {
        let f = doubly_stochastic_failures(mode, trials, 32, seed)?;
        out.push(CheckOutcome::below(
            format!("doubly_stochastic_{}", mode.name()),
            f as f64,
            1.0,
        ));
    }
    let traj = iterate_swaps(
        4.0,
        0.0,
        &spec(SigmoidKind::Logistic, 1.0),
        SwapMode::Soft,
        10_000,
    )?;
    let (lo, hi) = *traj.last().expect("k >= 1");
    let shrinking = traj
        .windows(2)
        .all(|w| (w[1].1 - w[1].0) < (w[0].1 - w[0].0) || w[1].1 - w[1].0 < 1e-15);
    out.push(CheckOutcome::below(
        "accumulation_midpoint",
        (lo - 2.0).abs().max((hi - 2.0).abs()),
        1e-6,
    ));
    out.push(CheckOutcome::flag("accumulation_gap_shrinks", shrinking));
    let f = exact_forward_failures(trials, 32, seed)?;
    out.push(CheckOutcome::below(
        "error_free_forward_exact",
        f as f64,
        1.0,
    ));
    let f = stage_gradient_mismatches(trials, 32, seed)?;
    out.push(CheckOutcome::below(
        "error_free_stage_gradient",
        f as f64,
        1.0,
    ));
    let f = split_failures(trials, 32, seed)?;
    out.push(CheckOutcome::below("split_hard_permutation", f as f64, 1.0));
    for (name, model) in [
        (
            "equivariance_mlp",
            ModelSpec::Mlp(MlpSpec::new(8, vec![16, 8])),
        ),
        (
            "equivariance_attention",
            ModelSpec::Attention(AttentionSpec::toy(8)),
        ),
    ] {
        out.push(CheckOutcome::below(
            name,
            equivariance_error(&model, 100, seed)?,
            1e-9,
        ));
    }
    Ok(out)
}
