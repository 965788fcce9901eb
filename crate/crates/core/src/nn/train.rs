use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::activation::Activation;
use crate::data::{metric_accuracy, metric_auc, Dataset};
use crate::ensemble::{add_l2_gradient, Ensemble, EnsembleGradients, Mode};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{softmax_cross_entropy, softmax_rows, BatchNorm, BatchNormGradients, Optimizer, OptimizerKind};
use crate::parallel::Parallelism;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub depth: usize,
    pub num_trees: usize,
    pub activation: Activation,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Strength of the `lambda * sum ||W||^2` penalty.
    pub l2: f64,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    /// Hyperplanes start uniform in `[-s / sqrt(p), s / sqrt(p)]`.
    pub init_scale: f64,
    /// Worker threads; 1 is serial and 0 uses every core.
    pub threads: usize,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    /// Store measured seconds in [`EpochRecord::wall_time_sec`]; otherwise 0
    /// so that histories are reproducible byte for byte.
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            depth: 4,
            num_trees: 10,
            activation: Activation::smooth_step(1.0).expect("valid gamma"),
            learning_rate: 0.1,
            batch_size: 256,
            epochs: 50,
            l2: 0.0,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            init_scale: 1.0,
            threads: 1,
            bn_momentum: BatchNorm::DEFAULT_MOMENTUM,
            bn_eps: BatchNorm::DEFAULT_EPS,
            record_wall_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.num_trees == 0 {
            return bad("number of trees must be >= 1".into());
        }
        if self.batch_size < 2 {
            return bad(format!("batch size must be >= 2, got {}", self.batch_size));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be > 0, got {}", self.learning_rate));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return bad(format!("L2 strength must be >= 0, got {}", self.l2));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return bad(format!("init scale must be >= 0, got {}", self.init_scale));
        }
        Ok(())
    }
}

/// Batch norm followed by the tree layer; the logits feed a softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub bn: BatchNorm,
    pub ensemble: Ensemble,
}

/// Gradients of every trainable tensor, in [`Model::param_slices_mut`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGradients {
    pub bn: BatchNormGradients,
    pub tel: EnsembleGradients,
}

impl ModelGradients {
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![&self.bn.d_scale, &self.bn.d_shift];
        for g in &self.tel.trees {
            out.push(g.d_w.as_slice());
            out.push(g.d_o.as_slice());
        }
        out
    }
}

/// Result of a train-mode step on one batch.
#[derive(Debug, Clone)]
pub struct StepOutput {
    /// Mean cross-entropy plus the L2 penalty.
    pub loss: f64,
    pub grads: ModelGradients,
    pub reachable_leaves: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    /// NaN when only one class is present.
    pub auc: f64,
    pub mean_reachable_leaves: f64,
    pub n: usize,
}

impl Model {
    pub fn new(p: usize, k: usize, cfg: &TrainConfig) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidParameter(format!("need at least 2 classes, got {k}")));
        }
        Ok(Self {
            bn: BatchNorm::new(p, cfg.bn_momentum, cfg.bn_eps)?,
            ensemble: Ensemble::new(cfg.depth, cfg.num_trees, p, k, cfg.activation, cfg.seed, cfg.init_scale)?,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.ensemble.input_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.ensemble.output_dim()
    }

    /// BN scale, BN shift, then `W_j, O_j` for each tree. Invalidates
    /// outstanding batch-norm caches.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let (scale, shift) = self.bn.params_mut();
        let mut out: Vec<&mut [f64]> = vec![scale, shift];
        for t in self.ensemble.trees.iter_mut() {
            out.push(t.w.as_mut_slice());
            out.push(t.o.as_mut_slice());
        }
        out
    }

    /// Forward and backward on one batch. Updates the batch-norm running
    /// statistics but not the trainable parameters.
    pub fn train_step(&mut self, x: &Matrix, labels: &[usize], l2: f64, par: &Parallelism) -> Result<StepOutput> {
        let (y, cache) = self.bn.forward(x, Mode::Train)?;
        let cache = cache.expect("train mode returns a cache");
        let fwd = self.ensemble.forward(&y, Mode::Train, par)?;
        let (ce, d_logits) = softmax_cross_entropy(&fwd.logits, labels)?;
        let mut tel = self.ensemble.backward(&y, &fwd, &d_logits, par)?;
        add_l2_gradient(&mut tel, &self.ensemble, l2)?;
        let bn = self.bn.backward(&cache, &tel.d_x)?;
        Ok(StepOutput {
            loss: ce + self.ensemble.l2_penalty(l2),
            grads: ModelGradients { bn, tel },
            reachable_leaves: fwd.reachable_leaves,
        })
    }

    /// Inference-mode logits (running BN statistics, no traces) and the
    /// reachable-leaf total.
    pub fn predict_logits(&self, x: &Matrix, par: &Parallelism) -> Result<(Matrix, usize)> {
        let mut bn = self.bn.clone();
        let (y, _) = bn.forward(x, Mode::Infer)?;
        let fwd = self.ensemble.forward(&y, Mode::Infer, par)?;
        Ok((fwd.logits, fwd.reachable_leaves))
    }

    pub fn predict_proba(&self, x: &Matrix, par: &Parallelism) -> Result<Matrix> {
        Ok(softmax_rows(&self.predict_logits(x, par)?.0))
    }

    pub fn evaluate(&self, ds: &Dataset, par: &Parallelism) -> Result<Evaluation> {
        if ds.is_empty() {
            return Err(Error::Data("cannot evaluate on an empty dataset".into()));
        }
        if ds.num_features() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                what: "input features",
                expected: self.input_dim(),
                actual: ds.num_features(),
            });
        }
        let k = self.num_classes();
        let (logits, reached) = self.predict_logits(&ds.x, par)?;
        let (loss, _) = softmax_cross_entropy(&logits, &ds.y)?;
        let probs = softmax_rows(&logits);
        let pred: Vec<usize> = probs
            .iter_rows()
            .map(|r| {
                let mut best = 0;
                for (j, &v) in r.iter().enumerate() {
                    if v > r[best] {
                        best = j;
                    }
                }
                best
            })
            .collect();
        let present = ds.class_counts().iter().filter(|&&c| c > 0).count();
        let auc = if present >= 2 { metric_auc(&probs, &ds.y, k)? } else { f64::NAN };
        Ok(Evaluation {
            loss,
            accuracy: metric_accuracy(&pred, &ds.y)?,
            auc,
            mean_reachable_leaves: reached as f64 / (ds.len() * self.ensemble.num_trees()) as f64,
            n: ds.len(),
        })
    }
}

/// One row of the training history.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub val_auc: f64,
    /// Average over the epoch's training batches, per sample per tree.
    pub mean_reachable_leaves: f64,
    pub wall_time_sec: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<EpochRecord>,
}

/// Epoch-by-epoch driver for [`train`].
#[derive(Debug)]
pub struct Trainer {
    cfg: TrainConfig,
    model: Model,
    optimizer: Optimizer,
    rng: ChaCha8Rng,
    par: Parallelism,
    epoch: usize,
    step: usize,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, p: usize, k: usize) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            model: Model::new(p, k, &cfg)?,
            optimizer: Optimizer::new(cfg.optimizer, cfg.learning_rate)?,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5DEE_CE66_D1CE_4E5B),
            par: Parallelism::new(cfg.threads)?,
            epoch: 0,
            step: 0,
            cfg,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn parallelism(&self) -> &Parallelism {
        &self.par
    }

    fn batches(&mut self, n: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.rng);
        let mut batches: Vec<Vec<usize>> = order.chunks(self.cfg.batch_size).map(<[usize]>::to_vec).collect();
        if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
            let last = batches.pop().expect("non-empty");
            batches.last_mut().expect("non-empty").extend(last);
        }
        batches
    }

    /// Shuffles, takes one optimizer step per batch, then scores the
    /// validation set (if any) in inference mode.
    pub fn run_epoch(&mut self, train: &Dataset, valid: Option<&Dataset>) -> Result<EpochRecord> {
        let p = self.model.input_dim();
        for ds in std::iter::once(train).chain(valid) {
            if ds.num_features() != p {
                return Err(Error::DimensionMismatch {
                    what: "input features",
                    expected: p,
                    actual: ds.num_features(),
                });
            }
        }
        if train.len() < 2 {
            return Err(Error::Data(format!("training needs at least 2 samples, got {}", train.len())));
        }
        self.epoch += 1;
        let started = Instant::now();
        let mut loss_sum = 0.0;
        let mut reached = 0usize;
        for batch in self.batches(train.len()) {
            self.step += 1;
            let x = train.x.select_rows(&batch);
            let y: Vec<usize> = batch.iter().map(|&i| train.y[i]).collect();
            let out = self.model.train_step(&x, &y, self.cfg.l2, &self.par)?;
            if !out.loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch: self.epoch,
                    step: self.step,
                    loss: out.loss,
                });
            }
            loss_sum += out.loss * batch.len() as f64;
            reached += out.reachable_leaves;
            let grads = out.grads.slices();
            let mut params = self.model.param_slices_mut();
            self.optimizer.step(&mut params, &grads)?;
        }
        let elapsed = started.elapsed().as_secs_f64();
        let (val_loss, val_acc, val_auc) = match valid {
            Some(v) => {
                let e = self.model.evaluate(v, &self.par)?;
                (e.loss, e.accuracy, e.auc)
            }
            None => (f64::NAN, f64::NAN, f64::NAN),
        };
        Ok(EpochRecord {
            epoch: self.epoch,
            train_loss: loss_sum / train.len() as f64,
            val_loss,
            val_acc,
            val_auc,
            mean_reachable_leaves: reached as f64 / (train.len() * self.model.ensemble.num_trees()) as f64,
            wall_time_sec: if self.cfg.record_wall_time { elapsed } else { 0.0 },
        })
    }
}

/// Trains a fresh model for `cfg.epochs` epochs. The number of classes is
/// taken from `train`.
pub fn train(cfg: &TrainConfig, train: &Dataset, valid: Option<&Dataset>) -> Result<TrainOutcome> {
    if let Some(v) = valid {
        if v.num_classes() > train.num_classes() {
            return Err(Error::Data(format!(
                "validation set has {} classes, training set {}",
                v.num_classes(),
                train.num_classes()
            )));
        }
    }
    let mut trainer = Trainer::new(cfg.clone(), train.num_features(), train.num_classes())?;
    let history = (0..cfg.epochs)
        .map(|_| trainer.run_epoch(train, valid))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainOutcome {
        model: trainer.into_model(),
        history,
    })
}
