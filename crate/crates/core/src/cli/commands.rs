use std::io::Write;

use serde::Serialize;

use crate::activation::Activation;
use crate::cli::{
    activation, write_history, ActivationArg, BenchReachableArgs, BenchSpeedArgs, EvalArgs, GradCheckArgs, ModelFile,
    SynthArgs, SynthKind, TrainArgs,
};
use crate::data::synthetic::{blobs, linear_xor};
use crate::data::{load_csv, stratified_split, write_csv, Dataset};
use crate::error::{Error, Result};
use crate::gradcheck::{
    check_batchnorm, check_end_to_end, check_softmax_ce, instance_seed, run_suite, Comparison, InstanceSpec,
    SuiteConfig, Tolerance,
};
use crate::nn::{train, Evaluation, OptimizerKind, TrainConfig, Trainer};
use crate::parallel::Parallelism;

fn io_err(e: std::io::Error) -> Error {
    Error::Io {
        path: "<output>".into(),
        source: e,
    }
}

fn print_json(out: &mut dyn Write, value: &impl Serialize) -> Result<()> {
    let line = serde_json::to_string(value)?;
    writeln!(out, "{line}").map_err(io_err)
}

/// Loads, splits, trains, writes the model and history, and prints the
/// held-out metrics as one JSON line.
pub fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> Result<Evaluation> {
    let cfg = args.train_config()?;
    cfg.validate()?;
    let ds = load_csv(&args.data, &args.label_col)?;
    let (train_set, test_set) = stratified_split(&ds, args.test_fraction, args.seed)?;
    if test_set.is_empty() {
        return Err(Error::Data("the held-out split is empty; use more data or a larger --test-fraction".into()));
    }
    let outcome = train(&cfg, &train_set, Some(&test_set))?;
    ModelFile::from_model(&outcome.model, &ds.class_names)?.write(&args.model_out)?;
    write_history(&args.history_out, &outcome.history)?;
    if let Some(path) = &args.test_out {
        write_csv(&test_set, path, &args.label_col)?;
    }
    let eval = outcome.model.evaluate(&test_set, &Parallelism::new(args.threads)?)?;
    print_json(out, &eval)?;
    Ok(eval)
}

/// Scores a saved model; labels are matched to the model's classes by name.
pub fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> Result<Evaluation> {
    let file = ModelFile::read(&args.model_in)?;
    let model = file.to_model()?;
    let ds = load_csv(&args.data, &args.label_col)?;
    if ds.num_features() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            what: "input features",
            expected: model.input_dim(),
            actual: ds.num_features(),
        });
    }
    let ds = ds.with_classes(&file.classes)?;
    let eval = model.evaluate(&ds, &Parallelism::new(args.threads)?)?;
    print_json(out, &eval)?;
    Ok(eval)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpeedRow {
    pub depth: usize,
    pub activation: String,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct SpeedReport {
    pub rows: Vec<SpeedRow>,
    /// `(depth, logistic seconds / smooth-step seconds)`.
    pub speedups: Vec<(usize, f64)>,
}

impl SpeedReport {
    pub fn seconds(&self, depth: usize, activation: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.depth == depth && r.activation == activation)
            .map(|r| r.seconds)
    }
}

fn emit_csv<T: Serialize>(rows: &[T], path: Option<&std::path::Path>, out: &mut dyn Write) -> Result<()> {
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        for r in rows {
            w.serialize(r)?;
        }
        w.flush().map_err(io_err)?;
    }
    match path {
        Some(p) => std::fs::write(p, &buf).map_err(|e| Error::io(p, e)),
        None => out.write_all(&buf).map_err(io_err),
    }
}

/// Seconds spent in `epochs` training epochs after one untimed warm-up epoch.
pub fn time_training(cfg: &TrainConfig, ds: &Dataset, epochs: usize) -> Result<f64> {
    let cfg = TrainConfig {
        record_wall_time: true,
        ..cfg.clone()
    };
    let mut trainer = Trainer::new(cfg, ds.num_features(), ds.num_classes())?;
    trainer.run_epoch(ds, None)?;
    let mut total = 0.0;
    for _ in 0..epochs {
        total += trainer.run_epoch(ds, None)?.wall_time_sec;
    }
    Ok(total)
}

/// Trains `trees` smooth-step and logistic trees at each depth on the
/// synthetic data and reports the timed seconds per configuration.
pub fn cmd_bench_speed(args: &BenchSpeedArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<SpeedReport> {
    let ds = linear_xor(args.n, args.p, args.seed);
    let mut rows = Vec::new();
    let mut speedups = Vec::new();
    for &depth in &args.depths {
        let mut secs = [0.0; 2];
        for (i, kind) in [ActivationArg::Smooth, ActivationArg::Logistic].into_iter().enumerate() {
            let act = activation(kind, args.gamma, args.alpha)?;
            let cfg = TrainConfig {
                depth,
                num_trees: args.trees,
                activation: act,
                learning_rate: args.lr,
                batch_size: args.batch_size,
                seed: args.seed,
                optimizer: OptimizerKind::Adam,
                threads: args.threads,
                ..TrainConfig::default()
            };
            secs[i] = time_training(&cfg, &ds, args.epochs)?;
            rows.push(SpeedRow {
                depth,
                activation: act.name().to_string(),
                seconds: secs[i],
            });
        }
        let ratio = secs[1] / secs[0];
        writeln!(err, "depth {depth}: smooth {:.3}s, logistic {:.3}s, speed-up {ratio:.2}x", secs[0], secs[1])
            .map_err(io_err)?;
        speedups.push((depth, ratio));
    }
    emit_csv(&rows, args.out.as_deref(), out)?;
    Ok(SpeedReport { rows, speedups })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReachableRow {
    pub gamma: f64,
    pub epoch: usize,
    pub mean_reachable_leaves: f64,
}

/// Trains one model per `gamma` and measures the mean reachable leaves per
/// sample per tree on the training data before training (epoch 0) and
/// after every epoch.
pub fn cmd_bench_reachable(args: &BenchReachableArgs, out: &mut dyn Write) -> Result<Vec<ReachableRow>> {
    let ds = match &args.data {
        Some(path) => load_csv(path, &args.label_col)?,
        None => linear_xor(args.n, args.p, args.seed),
    };
    let mut rows = Vec::new();
    for &gamma in &args.gammas {
        let cfg = TrainConfig {
            depth: args.depth,
            num_trees: args.trees,
            activation: Activation::smooth_step(gamma)?,
            learning_rate: args.lr,
            batch_size: args.batch_size,
            seed: args.seed,
            init_scale: args.init_scale,
            threads: args.threads,
            ..TrainConfig::default()
        };
        let mut trainer = Trainer::new(cfg, ds.num_features(), ds.num_classes())?;
        for epoch in 0..=args.epochs {
            if epoch > 0 {
                trainer.run_epoch(&ds, None)?;
            }
            let eval = trainer.model().evaluate(&ds, trainer.parallelism())?;
            rows.push(ReachableRow {
                gamma,
                epoch,
                mean_reachable_leaves: eval.mean_reachable_leaves,
            });
        }
    }
    emit_csv(&rows, args.out.as_deref(), out)?;
    Ok(rows)
}

fn report_line(out: &mut dyn Write, name: &str, cmp: &Comparison) -> Result<()> {
    writeln!(
        out,
        "{name}: checked {}, skipped {}, max rel err {:.3e}",
        cmp.checked, cmp.skipped, cmp.max_rel_err
    )
    .map_err(io_err)
}

/// Runs the randomized oracle suite plus the batch-norm, loss and
/// end-to-end network checks. Returns whether everything passed.
pub fn cmd_grad_check(args: &GradCheckArgs, out: &mut dyn Write) -> Result<bool> {
    if args.trials == 0 {
        writeln!(out, "warning: 0 trials requested, nothing was checked").map_err(io_err)?;
        writeln!(out, "PASS").map_err(io_err)?;
        return Ok(true);
    }
    let cfg = SuiteConfig {
        trials: args.trials,
        seed: args.seed,
        spec: InstanceSpec {
            max_depth: args.max_depth,
            max_p: args.max_p,
            max_k: args.max_k,
            ..InstanceSpec::default()
        },
        corrupt: args.corrupt,
        ..SuiteConfig::default()
    };
    let report = run_suite(&cfg)?;
    writeln!(out, "trials: {}", report.trials).map_err(io_err)?;
    writeln!(out, "forward vs dense: max rel err {:.3e}", report.forward_max_rel_err).map_err(io_err)?;
    report_line(out, "conditional vs dense", &report.dense)?;
    report_line(out, "conditional vs finite differences", &report.fd)?;

    let layer_tol = Tolerance { rel: 1e-5, abs: 1e-8 };
    let net_tol = Tolerance { rel: 1e-4, abs: 1e-8 };
    let mut layers = Comparison::default();
    let mut network = Comparison::default();
    let mut failure = report.first_failure.clone();
    for trial in 0..args.trials.min(20) {
        let seed = instance_seed(args.seed, trial);
        layers.merge(check_batchnorm(seed, layer_tol)?);
        layers.merge(check_softmax_ce(seed, layer_tol)?);
        let net = check_end_to_end(seed, net_tol)?;
        if failure.is_none() {
            failure = net.failure.as_ref().map(|f| format!("network seed {seed}: {f}"));
        }
        network.merge(net);
    }
    if failure.is_none() {
        failure = layers.failure.clone();
    }
    report_line(out, "batch norm and loss vs finite differences", &layers)?;
    report_line(out, "end-to-end network vs finite differences", &network)?;
    match failure {
        None => {
            writeln!(out, "PASS").map_err(io_err)?;
            Ok(true)
        }
        Some(msg) => {
            writeln!(out, "FAIL: {msg}").map_err(io_err)?;
            Ok(false)
        }
    }
}

pub fn cmd_synth(args: &SynthArgs) -> Result<Dataset> {
    let ds = match args.kind {
        SynthKind::Xor => {
            if args.p < 2 {
                return Err(Error::InvalidParameter("the xor dataset needs --p >= 2".into()));
            }
            linear_xor(args.n, args.p, args.seed)
        }
        SynthKind::Blobs => blobs(args.n, args.p, args.separation, args.seed),
    };
    write_csv(&ds, &args.out, "label")?;
    Ok(ds)
}
