//! The `neusort` command line: experiments, sweeps and check suites, all
//! writing CSV.

use std::ffi::OsString;
use std::fs::File;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::adgraph::Tape;
use crate::checks::{gradcheck_suite, props_suite, CheckOutcome};
use crate::error::Error;
use crate::permops::{accuracy_metrics, MetricSample};
use crate::sigmoid::{SigmoidKind, SigmoidSpec};
use crate::sortnet::{execute, WirePlan};
use crate::swap::{iterate_swaps, SwapMode};
use crate::tensor::Tensor;
use crate::training::{train_run, HistoryRow, SyntheticTask, TrainConfig};

/// Seeds used when none are given.
pub const DEFAULT_SEEDS: [u64; 5] = [42, 84, 126, 168, 210];
/// Sequence lengths used by `fig2` when none are given.
pub const DEFAULT_LENGTHS: [usize; 6] = [3, 5, 7, 9, 15, 32];
/// Steepness used by `fig2` when `--beta` is omitted; with scores in
/// `[-10, 10]` it keeps `βx` near the linear piece of the optimal sigmoid.
pub const FIG2_BETA: f64 = 0.03;

/// Failure of a command, carrying its process exit code.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("check failed: {0}")]
    CheckFailed(String),
    #[error("{0}")]
    NonFinite(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Io(_) => 1,
            CliError::CheckFailed(_) => 2,
            CliError::NonFinite(_) => 3,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::NonFinite { .. } => CliError::NonFinite(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Usage(format!("bad JSON: {e}"))
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "neusort",
    version,
    about = "Error-free differentiable sorting networks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sort raw uniform scores with the odd-even network and report accuracy.
    Fig2(Fig2Args),
    /// Apply one swap repeatedly and trace the pair.
    Accumulate(AccumulateArgs),
    /// Train a scorer end to end and print its evaluation history.
    Train(TrainArgs),
    /// Grid of training runs over steepness, learning rate and lambda.
    Sweep(SweepArgs),
    /// Finite-difference gradient checks; exit code 2 on failure.
    Gradcheck(CheckArgs),
    /// Property suites of the swap, network, split and scorer modules.
    Props(CheckArgs),
}

/// Sequence lengths given as `3,5,7` and/or inclusive ranges `3..32`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lengths(pub Vec<usize>);

fn parse_lengths(s: &str) -> std::result::Result<Lengths, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let a: usize = a.trim().parse().map_err(|_| format!("bad length `{a}`"))?;
            let b: usize = b.trim().parse().map_err(|_| format!("bad length `{b}`"))?;
            if a > b {
                return Err(format!("empty range {part}"));
            }
            out.extend(a..=b);
        } else {
            out.push(part.parse().map_err(|_| format!("bad length `{part}`"))?);
        }
    }
    if out.is_empty() || out.contains(&0) {
        return Err("lengths must be >= 1".into());
    }
    Ok(Lengths(out))
}

fn parse_sigmoid(s: &str) -> std::result::Result<SigmoidKind, String> {
    let kind: SigmoidKind = s.parse().map_err(|e: Error| e.to_string())?;
    if !SigmoidKind::SUPPORTED.contains(&kind) {
        return Err(Error::UnsupportedSigmoid(s.to_string()).to_string());
    }
    Ok(kind)
}

fn parse_mode(s: &str) -> std::result::Result<SwapMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Clone, Args)]
pub struct OutArg {
    /// Write CSV here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct Fig2Args {
    /// Sequence lengths: a list `3,5,7` and/or inclusive ranges `3..32`.
    #[arg(long, value_parser = parse_lengths, default_value = "3,5,7,9,15,32")]
    pub n: Lengths,
    /// soft, error-free or hard; both soft and error-free when omitted.
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<SwapMode>,
    /// Sigmoid kind; every supported kind when omitted.
    #[arg(long, value_parser = parse_sigmoid)]
    pub sigmoid: Option<SigmoidKind>,
    #[arg(long, default_value_t = FIG2_BETA)]
    pub beta: f64,
    /// Sequences per row.
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long = "seeds", alias = "seed", value_delimiter = ',')]
    pub seeds: Vec<u64>,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Clone, Args)]
pub struct AccumulateArgs {
    #[arg(long, default_value_t = 4.0, allow_negative_numbers = true)]
    pub x: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub y: f64,
    /// Number of swaps.
    #[arg(long, default_value_t = 20)]
    pub k: usize,
    #[arg(long, value_parser = parse_sigmoid)]
    pub sigmoid: Option<SigmoidKind>,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    #[arg(long, value_parser = parse_mode, default_value = "soft")]
    pub mode: SwapMode,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// JSON training config; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, value_parser = parse_sigmoid)]
    pub sigmoid: Option<SigmoidKind>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Also write a JSON run record (config, history, wall clock).
    #[arg(long)]
    pub record: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Steepness values; the config's (or the per-length default) if omitted.
    #[arg(long, value_delimiter = ',')]
    pub beta: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub lr: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub lambda: Vec<f64>,
    #[arg(long = "seeds", alias = "seed", value_delimiter = ',')]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Clone, Args)]
pub struct CheckArgs {
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Random cases per property.
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Serialize)]
struct Fig2Row {
    n: usize,
    mode: &'static str,
    sigmoid: &'static str,
    beta: f64,
    seed: u64,
    trials: usize,
    acc_em: f64,
    acc_ew: f64,
}

#[derive(Debug, Serialize)]
struct AccumulateRow {
    sigmoid: &'static str,
    beta: f64,
    k: usize,
    lo: f64,
    hi: f64,
    gap: f64,
}

#[derive(Debug, Clone, Serialize)]
struct SweepRow {
    beta: f64,
    lr: f64,
    lambda: f64,
    seeds: String,
    steps: usize,
    acc_em: f64,
    acc_ew: f64,
    loss_total: f64,
}

#[derive(Debug, Serialize)]
struct RunRecord<'a> {
    experiment: &'static str,
    seed: u64,
    config: &'a TrainConfig<f64>,
    history: &'a [HistoryRow],
    wall_clock_secs: f64,
}

fn seeds_or_default(seeds: &[u64]) -> Vec<u64> {
    if seeds.is_empty() {
        DEFAULT_SEEDS.to_vec()
    } else {
        seeds.to_vec()
    }
}

fn write_rows<R: Serialize>(
    rows: &[R],
    path: Option<&PathBuf>,
    stdout: &mut dyn Write,
) -> CliResult<()> {
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    match path {
        Some(p) => File::create(p)?.write_all(&buf)?,
        None => stdout.write_all(&buf)?,
    }
    Ok(())
}

/// Accuracy of the odd-even network applied directly to `trials` uniform
/// scalar sequences of length `n`.
pub fn fig2_accuracy(
    n: usize,
    mode: SwapMode,
    spec: &SigmoidSpec<f64>,
    trials: usize,
    seed: u64,
) -> crate::Result<(f64, f64)> {
    let plan = WirePlan::odd_even(n)?;
    let task = SyntheticTask::scalar();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<_> = (0..trials)
        .map(|_| task.sample::<f64>(n, &mut rng))
        .collect();
    let perms: Vec<Tensor<f64>> = samples
        .par_iter()
        .map(|s| {
            let mut tape = Tape::new();
            let v = tape.constant(Tensor::vector(s.keys.clone()));
            let (_, p) = execute(&mut tape, &plan, v, spec, mode)?;
            Ok(p.values(&tape).clone())
        })
        .collect::<crate::Result<_>>()?;
    let metric: Vec<MetricSample<'_, f64>> = samples
        .iter()
        .zip(&perms)
        .map(|(s, p)| MetricSample {
            scores: &s.keys,
            perm: p,
            gt: &s.gt,
        })
        .collect();
    accuracy_metrics(&metric)
}

fn cmd_fig2(a: &Fig2Args, stdout: &mut dyn Write) -> CliResult<()> {
    if a.trials == 0 {
        return Err(CliError::Usage("--trials must be >= 1".into()));
    }
    let modes = match a.mode {
        Some(m) => vec![m],
        None => vec![SwapMode::Soft, SwapMode::ErrorFree],
    };
    let kinds = match a.sigmoid {
        Some(k) => vec![k],
        None => SigmoidKind::SUPPORTED.to_vec(),
    };
    let mut rows = Vec::new();
    for &n in &a.n.0 {
        for &mode in &modes {
            for &kind in &kinds {
                let spec = SigmoidSpec::new(kind, a.beta)?;
                for seed in seeds_or_default(&a.seeds) {
                    let (acc_em, acc_ew) = fig2_accuracy(n, mode, &spec, a.trials, seed)?;
                    rows.push(Fig2Row {
                        n,
                        mode: mode.name(),
                        sigmoid: kind.name(),
                        beta: a.beta,
                        seed,
                        trials: a.trials,
                        acc_em,
                        acc_ew,
                    });
                }
            }
        }
    }
    write_rows(&rows, a.out.out.as_ref(), stdout)
}

fn cmd_accumulate(a: &AccumulateArgs, stdout: &mut dyn Write) -> CliResult<()> {
    if a.k == 0 {
        return Err(CliError::Usage("--k must be >= 1".into()));
    }
    let kinds = match a.sigmoid {
        Some(k) => vec![k],
        None => SigmoidKind::SUPPORTED.to_vec(),
    };
    let mut rows = Vec::new();
    for kind in kinds {
        let spec = SigmoidSpec::new(kind, a.beta)?;
        for (i, (lo, hi)) in iterate_swaps(a.x, a.y, &spec, a.mode, a.k)?
            .into_iter()
            .enumerate()
        {
            rows.push(AccumulateRow {
                sigmoid: kind.name(),
                beta: a.beta,
                k: i + 1,
                lo,
                hi,
                gap: hi - lo,
            });
        }
    }
    write_rows(&rows, a.out.out.as_ref(), stdout)
}

fn load_config(path: Option<&PathBuf>) -> CliResult<TrainConfig<f64>> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            Ok(serde_json::from_str(&text)?)
        }
        None => Ok(TrainConfig::vector_default()),
    }
}

fn cmd_train(a: &TrainArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let mut c = load_config(a.config.as_ref())?;
    if let Some(v) = a.seed {
        c.seed = v;
    }
    if let Some(v) = a.n {
        c.n = v;
    }
    if let Some(v) = a.sigmoid {
        c.sigmoid = v;
    }
    if a.beta.is_some() {
        c.beta = a.beta;
    }
    if let Some(v) = a.lambda {
        c.lambda = v;
    }
    if let Some(v) = a.lr {
        c.lr = v;
    }
    if let Some(v) = a.steps {
        c.steps = v;
    }
    c.validate()?;
    let start = Instant::now();
    let outcome = train_run(&c)?;
    let elapsed = start.elapsed().as_secs_f64();
    write_rows(&outcome.history, a.out.out.as_ref(), stdout)?;
    if let Some(path) = &a.record {
        let record = RunRecord {
            experiment: "train",
            seed: c.seed,
            config: &c,
            history: &outcome.history,
            wall_clock_secs: elapsed,
        };
        std::fs::write(path, serde_json::to_string_pretty(&record)?)?;
    }
    Ok(())
}

fn cmd_sweep(a: &SweepArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let mut base = load_config(a.config.as_ref())?;
    if let Some(v) = a.n {
        base.n = v;
    }
    if let Some(v) = a.steps {
        base.steps = v;
    }
    let or = |v: &[f64], d: f64| if v.is_empty() { vec![d] } else { v.to_vec() };
    let betas = or(&a.beta, base.beta_value());
    let lrs = or(&a.lr, base.lr);
    let lambdas = or(&a.lambda, base.lambda);
    let seeds = seeds_or_default(&a.seeds);
    let mut cells = Vec::new();
    for &beta in &betas {
        for &lr in &lrs {
            for &lambda in &lambdas {
                let c = TrainConfig {
                    beta: Some(beta),
                    lr,
                    lambda,
                    ..base.clone()
                };
                c.validate()?;
                cells.push(c);
            }
        }
    }
    let mut rows: Vec<SweepRow> = cells
        .par_iter()
        .map(|c| -> CliResult<SweepRow> {
            let mut sums = [0.0; 3];
            for &seed in &seeds {
                let run = TrainConfig { seed, ..c.clone() };
                let last = *train_run(&run)?.last();
                sums[0] += last.acc_em;
                sums[1] += last.acc_ew;
                sums[2] += last.loss_total;
            }
            let k = seeds.len() as f64;
            Ok(SweepRow {
                beta: c.beta_value(),
                lr: c.lr,
                lambda: c.lambda,
                seeds: seeds
                    .iter()
                    .map(u64::to_string)
                    .collect::<Vec<_>>()
                    .join(";"),
                steps: c.steps,
                acc_em: sums[0] / k,
                acc_ew: sums[1] / k,
                loss_total: sums[2] / k,
            })
        })
        .collect::<CliResult<_>>()?;
    rows.sort_by(|x, y| {
        (x.beta, x.lr, x.lambda)
            .partial_cmp(&(y.beta, y.lr, y.lambda))
            .expect("finite grid")
    });
    write_rows(&rows, a.out.out.as_ref(), stdout)
}

fn finish_checks(
    results: Vec<CheckOutcome>,
    a: &CheckArgs,
    stdout: &mut dyn Write,
) -> CliResult<()> {
    write_rows(&results, a.out.out.as_ref(), stdout)?;
    let failed: Vec<&str> = results
        .iter()
        .filter(|c| !c.passed)
        .map(|c| c.name.as_str())
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::CheckFailed(failed.join(", ")))
    }
}

/// Parses `args` (including the program name) and runs the command,
/// writing CSV to `stdout` unless `--out` is given.
pub fn run<I, S>(args: I, stdout: &mut dyn Write) -> CliResult<()>
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            write!(stdout, "{e}")?;
            return Ok(());
        }
        Err(e) => return Err(CliError::Usage(e.to_string())),
    };
    match &cli.command {
        Command::Fig2(a) => cmd_fig2(a, stdout),
        Command::Accumulate(a) => cmd_accumulate(a, stdout),
        Command::Train(a) => cmd_train(a, stdout),
        Command::Sweep(a) => cmd_sweep(a, stdout),
        Command::Gradcheck(a) => finish_checks(gradcheck_suite(a.seed)?, a, stdout),
        Command::Props(a) => {
            if a.trials == 0 {
                return Err(CliError::Usage("--trials must be >= 1".into()));
            }
            finish_checks(props_suite(a.trials, a.seed)?, a, stdout)
        }
    }
}
