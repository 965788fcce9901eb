//! Command-line entry points, the JSON model format and the benchmark
//! harnesses. Every subcommand is also callable as a library function.

mod commands;
mod model_file;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use commands::{
    cmd_bench_reachable, cmd_bench_speed, cmd_eval, cmd_grad_check, cmd_synth, cmd_train, ReachableRow, SpeedReport,
    SpeedRow,
};
pub use model_file::{BatchNormFile, ModelFile, TreeFile, FORMAT_VERSION};

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::nn::{EpochRecord, OptimizerKind, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "tel", version, about = "Tree ensemble layer: training, evaluation and benchmarks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split a CSV dataset, train, and write the model and history.
    Train(TrainArgs),
    /// Score a saved model on a CSV dataset.
    Eval(EvalArgs),
    /// Time smooth-step against logistic training across depths.
    BenchSpeed(BenchSpeedArgs),
    /// Track reachable leaves per sample during training for several widths.
    BenchReachable(BenchReachableArgs),
    /// Randomized gradient checks of the conditional backward pass.
    GradCheck(GradCheckArgs),
    /// Write a bundled synthetic dataset as CSV.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ActivationArg {
    Smooth,
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OptimizerArg {
    Adam,
    Sgd,
}

impl From<OptimizerArg> for OptimizerKind {
    fn from(o: OptimizerArg) -> Self {
        match o {
            OptimizerArg::Adam => OptimizerKind::Adam,
            OptimizerArg::Sgd => OptimizerKind::Sgd,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "label")]
    pub label_col: String,
    #[arg(long, default_value_t = 4)]
    pub depth: usize,
    #[arg(long, default_value_t = 10)]
    pub trees: usize,
    #[arg(long, value_enum, default_value_t = ActivationArg::Smooth)]
    pub activation: ActivationArg,
    /// Smooth-step ramp width.
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    /// Logistic temperature.
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Adam)]
    pub optimizer: OptimizerArg,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.0)]
    pub l2: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; 1 is serial, 0 uses every core.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
    /// Hyperplanes start uniform in [-s/sqrt(p), s/sqrt(p)].
    #[arg(long, default_value_t = 1.0)]
    pub init_scale: f64,
    #[arg(long, default_value_t = 0.3)]
    pub test_fraction: f64,
    #[arg(long, default_value = "model.json")]
    pub model_out: PathBuf,
    #[arg(long, default_value = "history.csv")]
    pub history_out: PathBuf,
    /// Also write the held-out split as CSV.
    #[arg(long)]
    pub test_out: Option<PathBuf>,
    /// Store measured epoch times in the history instead of 0.
    #[arg(long)]
    pub record_wall_time: bool,
}

impl TrainArgs {
    pub fn train_config(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            depth: self.depth,
            num_trees: self.trees,
            activation: activation(self.activation, self.gamma, self.alpha)?,
            learning_rate: self.lr,
            batch_size: self.batch_size,
            epochs: self.epochs,
            l2: self.l2,
            seed: self.seed,
            optimizer: self.optimizer.into(),
            init_scale: self.init_scale,
            threads: self.threads,
            record_wall_time: self.record_wall_time,
            ..TrainConfig::default()
        })
    }
}

fn activation(kind: ActivationArg, gamma: f64, alpha: f64) -> Result<Activation> {
    match kind {
        ActivationArg::Smooth => Activation::smooth_step(gamma),
        ActivationArg::Logistic => Activation::logistic(alpha),
    }
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model_in: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "label")]
    pub label_col: String,
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
}

#[derive(Debug, Clone, Args)]
pub struct BenchSpeedArgs {
    #[arg(long, value_delimiter = ',', default_value = "2,4,6,8,10")]
    pub depths: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub trees: usize,
    /// Timed epochs; one extra warm-up epoch runs first.
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
    /// Synthetic sample count.
    #[arg(long, default_value_t = 5000)]
    pub n: usize,
    /// Synthetic feature count.
    #[arg(long, default_value_t = 20)]
    pub p: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Used for both activations.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// CSV destination; standard output if absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct BenchReachableArgs {
    #[arg(long, value_delimiter = ',', default_value = "0.0001,0.01,1")]
    pub gammas: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    pub depth: usize,
    #[arg(long, default_value_t = 1)]
    pub trees: usize,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
    /// Near-zero initial hyperplanes; exactly 0 never leaves the symmetric start.
    #[arg(long, default_value_t = 1e-6)]
    pub init_scale: f64,
    /// CSV dataset; the bundled synthetic data if absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "label")]
    pub label_col: String,
    #[arg(long, default_value_t = 5000)]
    pub n: usize,
    #[arg(long, default_value_t = 20)]
    pub p: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct GradCheckArgs {
    #[arg(long, default_value_t = 200)]
    pub trials: usize,
    #[arg(long, default_value_t = 8)]
    pub max_depth: usize,
    #[arg(long, default_value_t = 20)]
    pub max_p: usize,
    #[arg(long, default_value_t = 5)]
    pub max_k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Perturb one analytic gradient entry per instance.
    #[arg(long, hide = true)]
    pub corrupt: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    /// Random hyperplane plus an XOR of two feature signs.
    Xor,
    /// Two Gaussian blobs.
    Blobs,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value_t = SynthKind::Xor)]
    pub kind: SynthKind,
    #[arg(long, default_value_t = 5000)]
    pub n: usize,
    #[arg(long, default_value_t = 20)]
    pub p: usize,
    /// Distance between blob centres.
    #[arg(long, default_value_t = 4.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Writes one row per epoch with a header.
pub fn write_history(path: impl AsRef<Path>, history: &[EpochRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    if history.is_empty() {
        w.write_record([
            "epoch",
            "train_loss",
            "val_loss",
            "val_acc",
            "val_auc",
            "mean_reachable_leaves",
            "wall_time_sec",
        ])?;
    }
    for rec in history {
        w.serialize(rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Parses `args` (including the program name) and runs the subcommand.
/// Returns the process exit code: 0 on success, 1 on failure, 2 on usage
/// errors.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let rendered = e.render();
            let _ = if e.use_stderr() {
                write!(err, "{rendered}")
            } else {
                write!(out, "{rendered}")
            };
            return code;
        }
    };
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a, out).map(|_| true),
        Command::Eval(a) => cmd_eval(a, out).map(|_| true),
        Command::BenchSpeed(a) => cmd_bench_speed(a, out, err).map(|_| true),
        Command::BenchReachable(a) => cmd_bench_reachable(a, out).map(|_| true),
        Command::GradCheck(a) => cmd_grad_check(a, out),
        Command::Synth(a) => cmd_synth(a).map(|_| true),
    };
    match result {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}
