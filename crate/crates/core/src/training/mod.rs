//! Losses, AdamW, synthetic tasks and the training loop.

mod loss;
mod optim;
mod run;
mod task;

pub use loss::{combined_loss, loss_hard, loss_hard_split, loss_soft, LossParts};
pub use optim::{AdamW, AdamWConfig};
pub use run::{
    default_beta, evaluate, sequence_loss, train_run, EvalReport, EvalSettings, HistoryRow,
    LrDecay, TaskConfig, TrainConfig, TrainOutcome,
};
pub use task::{gen_task, Sample, SyntheticTask, TaskKind, SCALAR_RANGE};
