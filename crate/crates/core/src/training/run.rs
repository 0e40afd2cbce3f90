use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::loss::{combined_loss, LossParts};
use super::optim::{AdamW, AdamWConfig};
use super::task::{gen_task, Sample, SyntheticTask, TaskKind};
use crate::adgraph::{Node, Tape};
use crate::error::{Error, Result};
use crate::models::{BoundParams, MlpSpec, ModelSpec, ParamSet};
use crate::permops::{accuracy_metrics, MetricSample};
use crate::sigmoid::{SigmoidKind, SigmoidSpec};
use crate::sortnet::{execute, WirePlan};
use crate::swap::SwapMode;
use crate::tensor::Tensor;
use crate::Real;

const BETA_TABLE: [(usize, f64); 6] = [
    (3, 6.0),
    (5, 20.0),
    (7, 29.0),
    (9, 32.0),
    (15, 25.0),
    (32, 124.0),
];

/// Default steepness for sequence length `n`: the tuned value of the
/// nearest tabulated length (the shorter one on ties).
pub fn default_beta(n: usize) -> f64 {
    BETA_TABLE
        .iter()
        .min_by_key(|(m, _)| (m.abs_diff(n), *m))
        .map(|&(_, b)| b)
        .expect("non-empty table")
}

/// Learning rate multiplied by `factor` every `every` optimizer steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrDecay {
    pub factor: f64,
    pub every: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub kind: TaskKind,
    /// Element dimension for the vector task.
    pub dim: usize,
    /// Seed of the hidden key map.
    pub task_seed: u64,
}

impl TaskConfig {
    pub fn build(&self) -> Result<SyntheticTask> {
        match self.kind {
            TaskKind::Scalar => Ok(SyntheticTask::scalar()),
            TaskKind::Vector => SyntheticTask::vector(self.dim, self.task_seed),
        }
    }
}

/// Everything that determines a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Serialize + DeserializeOwned")]
pub struct TrainConfig<T> {
    pub n: usize,
    pub n_train: usize,
    pub n_eval: usize,
    /// Sequences per optimizer step.
    pub batch: usize,
    pub lambda: T,
    pub sigmoid: SigmoidKind,
    /// Steepness; `None` picks [`default_beta`] for `n`.
    pub beta: Option<T>,
    pub lr: T,
    pub lr_decay: LrDecay,
    pub steps: usize,
    pub seed: u64,
    pub eval_every: usize,
    /// Use the split form of the hard loss.
    pub split_hard: bool,
    pub optimizer: AdamWConfig,
    pub task: TaskConfig,
    pub model: ModelSpec,
}

impl<T: Real> TrainConfig<T> {
    /// Vector task with `d = 8`, an MLP scorer and `n = 5`.
    pub fn vector_default() -> Self {
        Self {
            n: 5,
            n_train: 20_000,
            n_eval: 1_000,
            batch: 32,
            lambda: T::of(0.1),
            sigmoid: SigmoidKind::OptimalMonotonic,
            beta: None,
            lr: T::of(1e-3),
            lr_decay: LrDecay {
                factor: 0.5,
                every: 2_000,
            },
            steps: 5_000,
            seed: 42,
            eval_every: 500,
            split_hard: false,
            optimizer: AdamWConfig::default(),
            task: TaskConfig {
                kind: TaskKind::Vector,
                dim: 8,
                task_seed: 7,
            },
            model: ModelSpec::Mlp(MlpSpec::new(8, vec![32])),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.n == 0 {
            return bad("n must be >= 1");
        }
        if !(self.lambda >= T::zero()) {
            return bad("lambda must be >= 0");
        }
        if !(self.lr > T::zero()) {
            return bad("lr must be > 0");
        }
        if self.batch == 0 || self.n_train == 0 || self.n_eval == 0 {
            return bad("batch, n_train and n_eval must be >= 1");
        }
        if self.eval_every == 0 || self.lr_decay.every == 0 {
            return bad("eval_every and lr_decay.every must be >= 1");
        }
        if !(self.lr_decay.factor > 0.0) {
            return bad("lr_decay.factor must be > 0");
        }
        let dim = match self.task.kind {
            TaskKind::Scalar => 1,
            TaskKind::Vector => self.task.dim,
        };
        if let Some(d) = self.model.input_dim() {
            if d != dim {
                return Err(Error::Config(format!(
                    "model expects {d} input columns but the task has {dim}"
                )));
            }
        }
        self.spec()
            .map(|_| ())
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn beta_value(&self) -> T {
        self.beta.unwrap_or_else(|| T::of(default_beta(self.n)))
    }

    pub fn spec(&self) -> Result<SigmoidSpec<T>> {
        SigmoidSpec::new(self.sigmoid, self.beta_value())
    }

    /// Learning rate in effect for the update after `step` updates.
    pub fn lr_at(&self, step: usize) -> T {
        let k = (step / self.lr_decay.every) as i32;
        self.lr * T::of(self.lr_decay.factor.powi(k))
    }
}

/// Settings shared by every evaluated sequence.
#[derive(Debug, Clone, Copy)]
pub struct EvalSettings<T> {
    pub spec: SigmoidSpec<T>,
    /// Which permutation the metrics read: soft, error-free or hard.
    pub mode: SwapMode,
    pub lambda: T,
    pub split_hard: bool,
    /// Network mode feeding the hard loss term. Error-free in training;
    /// soft makes the whole loss smooth for finite-difference checks.
    pub hard_term: SwapMode,
}

/// Held-out metrics and mean losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalReport {
    pub acc_em: f64,
    pub acc_ew: f64,
    pub loss_soft: f64,
    pub loss_hard: f64,
    pub loss_total: f64,
}

/// One line of the training history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistoryRow {
    pub step: usize,
    pub loss_soft: f64,
    pub loss_hard: f64,
    pub loss_total: f64,
    pub acc_em: f64,
    pub acc_ew: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub params: ParamSet<T>,
    pub history: Vec<HistoryRow>,
}

impl<T> TrainOutcome<T> {
    pub fn last(&self) -> &HistoryRow {
        self.history.last().expect("history has a baseline row")
    }
}

/// Scores one sequence, runs the network for the soft and the hard loss term
/// and builds the combined loss. Returns the scores, the losses and the two
/// permutation matrices.
pub fn sequence_loss<T: Real>(
    tape: &mut Tape<T>,
    model: &ModelSpec,
    params: &BoundParams,
    plan: &WirePlan,
    sample: &Sample<T>,
    settings: &EvalSettings<T>,
) -> Result<(Node, LossParts, [crate::sortnet::PermMatrix; 2])> {
    let x = tape.constant(sample.x.clone());
    let s = model.forward(tape, params, x)?;
    let (_, p_soft) = execute(tape, plan, s, &settings.spec, SwapMode::Soft)?;
    let (_, p_hard) = execute(tape, plan, s, &settings.spec, settings.hard_term)?;
    let parts = combined_loss(
        tape,
        &p_soft,
        &p_hard,
        &sample.gt,
        x,
        settings.lambda,
        settings.split_hard,
    )?;
    Ok((s, parts, [p_soft, p_hard]))
}

struct Scored<T> {
    scores: Vec<T>,
    perm: Tensor<T>,
    losses: [f64; 3],
}

/// Metrics and mean losses of `params` on `samples`; parameters are not
/// touched and the result does not depend on the thread count.
pub fn evaluate<T: Real>(
    model: &ModelSpec,
    params: &ParamSet<T>,
    samples: &[Sample<T>],
    settings: &EvalSettings<T>,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::invalid("evaluation needs at least one sequence"));
    }
    let n = samples[0].keys.len();
    let plan = WirePlan::odd_even(n)?;
    let scored: Vec<Scored<T>> = samples
        .par_iter()
        .map(|sample| {
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape, false);
            let (s, parts, [p_soft, p_hard]) =
                sequence_loss(&mut tape, model, &bound, &plan, sample, settings)?;
            let perm = match settings.mode {
                SwapMode::Soft => p_soft.values(&tape).clone(),
                m if m == settings.hard_term => p_hard.values(&tape).clone(),
                m => {
                    let (_, p) = execute(&mut tape, &plan, s, &settings.spec, m)?;
                    p.values(&tape).clone()
                }
            };
            Ok(Scored {
                scores: tape.value(s).data().to_vec(),
                perm,
                losses: [parts.soft, parts.hard, parts.total].map(|l| tape.item(l).as_f64()),
            })
        })
        .collect::<Result<_>>()?;
    let metric_samples: Vec<MetricSample<'_, T>> = scored
        .iter()
        .zip(samples)
        .map(|(r, s)| MetricSample {
            scores: &r.scores,
            perm: &r.perm,
            gt: &s.gt,
        })
        .collect();
    let (acc_em, acc_ew) = accuracy_metrics(&metric_samples)?;
    let count = scored.len() as f64;
    let mean = |k: usize| scored.iter().map(|r| r.losses[k]).sum::<f64>() / count;
    Ok(EvalReport {
        acc_em,
        acc_ew,
        loss_soft: mean(0),
        loss_hard: mean(1),
        loss_total: mean(2),
    })
}

fn derive_seed(seed: u64, tag: u64) -> u64 {
    seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Trains the configured scorer and records held-out metrics at step 0,
/// every `eval_every` steps and after the last step.
pub fn train_run<T: Real>(config: &TrainConfig<T>) -> Result<TrainOutcome<T>> {
    config.validate()?;
    let task = config.task.build()?;
    let spec = config.spec()?;
    let plan = WirePlan::odd_even(config.n)?;
    let train: Vec<Sample<T>> =
        gen_task(&task, config.n, config.n_train, derive_seed(config.seed, 1))?;
    let held_out: Vec<Sample<T>> =
        gen_task(&task, config.n, config.n_eval, derive_seed(config.seed, 2))?;
    let mut batches = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 3));
    let mut params: ParamSet<T> = config.model.init_params(config.seed);
    let mut opt = AdamW::new(config.optimizer, params.values());
    let settings = EvalSettings {
        spec,
        mode: SwapMode::ErrorFree,
        lambda: config.lambda,
        split_hard: config.split_hard,
        hard_term: SwapMode::ErrorFree,
    };

    let row = |step: usize, lr: T, params: &ParamSet<T>| -> Result<HistoryRow> {
        let r = evaluate(&config.model, params, &held_out, &settings)?;
        Ok(HistoryRow {
            step,
            loss_soft: r.loss_soft,
            loss_hard: r.loss_hard,
            loss_total: r.loss_total,
            acc_em: r.acc_em,
            acc_ew: r.acc_ew,
            lr: lr.as_f64(),
        })
    };

    let mut history = vec![row(0, config.lr_at(0), &params)?];
    let scale = T::one() / T::of(config.batch as f64);
    for step in 0..config.steps {
        let lr = config.lr_at(step);
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, true);
        let mut total = tape.scalar(T::zero());
        for _ in 0..config.batch {
            let sample = &train[batches.gen_range(0..train.len())];
            let (_, parts, _) =
                sequence_loss(&mut tape, &config.model, &bound, &plan, sample, &settings)?;
            total = tape.add(total, parts.total)?;
        }
        let loss = tape.scale(total, scale);
        if !tape.item(loss).is_finite() {
            return Err(Error::NonFinite {
                op: "training loss",
            });
        }
        let grads = tape.backward(loss)?;
        let g: Vec<Tensor<T>> = bound.nodes().iter().map(|&p| grads.get(p)).collect();
        if g.iter().any(|t| !t.all_finite()) {
            return Err(Error::NonFinite {
                op: "training gradient",
            });
        }
        opt.step(params.values_mut(), &g, lr)?;
        let done = step + 1;
        if done % config.eval_every == 0 || done == config.steps {
            history.push(row(done, lr, &params)?);
        }
    }
    Ok(TrainOutcome { params, history })
}
