//! Batch normalization, loss, optimizers and the training loop around the
//! tree layer.

mod batchnorm;
mod loss;
mod optim;
mod train;

pub use batchnorm::{BatchNorm, BatchNormCache, BatchNormGradients};
pub use loss::{softmax_cross_entropy, softmax_rows};
pub use optim::{sgd_step, AdamState, Optimizer, OptimizerKind};
pub use train::{train, EpochRecord, Evaluation, Model, ModelGradients, StepOutput, TrainConfig, TrainOutcome, Trainer};
