//! The Tree Ensemble Layer: an additive model over `m` trees sharing
//! depth, input dimension and output dimension.

use crate::activation::Activation;
use crate::backward::{conditional_backward_accumulate, dense_backward_from_dots};
use crate::error::{Error, Result};
use crate::forward::{conditional_forward_into, dense_forward_into, ForwardTrace};
use crate::matrix::{axpy, Matrix};
use crate::parallel::Parallelism;
use crate::tree::{TreeParams, TreeTopology};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// What the backward pass needs from one (sample, tree) forward evaluation.
#[derive(Debug, Clone)]
pub enum TreeTrace {
    Conditional(ForwardTrace),
    /// Dense passes keep every dot product.
    Dense(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    topo: TreeTopology,
    input_dim: usize,
    output_dim: usize,
    activation: Activation,
    pub trees: Vec<TreeParams>,
}

/// Output of [`Ensemble::forward`].
#[derive(Debug, Clone)]
pub struct EnsembleForward {
    pub logits: Matrix,
    /// `traces[sample][tree]`; empty in inference mode.
    pub traces: Vec<Vec<TreeTrace>>,
    /// Reachable leaves summed over samples and trees.
    pub reachable_leaves: usize,
}

impl EnsembleForward {
    /// Average number of reachable leaves per sample per tree.
    pub fn mean_reachable_leaves(&self, num_trees: usize) -> f64 {
        let denom = self.logits.rows() * num_trees;
        if denom == 0 {
            0.0
        } else {
            self.reachable_leaves as f64 / denom as f64
        }
    }
}

/// Dense per-tree gradient buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeGradBuffers {
    pub d_w: Matrix,
    pub d_o: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleGradients {
    pub trees: Vec<TreeGradBuffers>,
    /// `batch x p`.
    pub d_x: Matrix,
    /// Fractional-tree nodes visited by the backward pass, over the batch.
    pub backward_visits: usize,
}

impl Ensemble {
    /// `num_trees` trees with weights from [`TreeParams::init_scaled`]; each
    /// tree gets its own seed drawn from `seed`.
    pub fn new(
        depth: usize,
        num_trees: usize,
        input_dim: usize,
        output_dim: usize,
        activation: Activation,
        seed: u64,
        init_scale: f64,
    ) -> Result<Self> {
        if num_trees == 0 {
            return Err(Error::InvalidParameter("ensemble needs at least one tree".into()));
        }
        let topo = TreeTopology::new(depth)?;
        let trees = (0..num_trees)
            .map(|j| {
                let tree_seed = seed ^ (j as u64 + 1).wrapping_mul(0xA076_1D64_78BD_642F);
                TreeParams::init_scaled(&topo, input_dim, output_dim, tree_seed, init_scale)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            topo,
            input_dim,
            output_dim,
            activation,
            trees,
        })
    }

    pub fn from_trees(topo: TreeTopology, activation: Activation, trees: Vec<TreeParams>) -> Result<Self> {
        let first = trees
            .first()
            .ok_or_else(|| Error::InvalidParameter("ensemble needs at least one tree".into()))?;
        let (p, k) = (first.input_dim(), first.output_dim());
        if p == 0 || k == 0 {
            return Err(Error::InvalidParameter("tree dimensions must be >= 1".into()));
        }
        for t in &trees {
            t.check(&topo)?;
            if t.input_dim() != p || t.output_dim() != k {
                return Err(Error::InvalidParameter(
                    "all trees must share input and output dimensions".into(),
                ));
            }
        }
        Ok(Self {
            topo,
            input_dim: p,
            output_dim: k,
            activation,
            trees,
        })
    }

    pub fn topology(&self) -> &TreeTopology {
        &self.topo
    }

    pub fn activation(&self) -> &Activation {
        &self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn num_trees(&self) -> usize {
        self.trees.len()
    }

    fn check_batch(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_dim {
            return Err(Error::DimensionMismatch {
                what: "input features",
                expected: self.input_dim,
                actual: x.cols(),
            });
        }
        Ok(())
    }

    /// Row `b` of the logits is the sum of every tree's output on `x_b`.
    /// Smooth-step ensembles use the conditional pass, logistic ones the
    /// dense pass. Traces are only kept in [`Mode::Train`].
    pub fn forward(&self, x: &Matrix, mode: Mode, par: &Parallelism) -> Result<EnsembleForward> {
        self.check_batch(x)?;
        let k = self.output_dim;
        let per_sample = par.map(x.rows(), |b| {
            let xb = x.row(b);
            let mut out = vec![0.0; k];
            let mut traces = Vec::new();
            let mut reached = 0;
            for tree in &self.trees {
                match self.activation {
                    Activation::SmoothStep(act) => {
                        if mode == Mode::Train {
                            let mut trace = ForwardTrace::default();
                            let stats =
                                conditional_forward_into(tree, &self.topo, &act, xb, &mut out, Some(&mut trace));
                            reached += stats.leaves;
                            traces.push(TreeTrace::Conditional(trace));
                        } else {
                            let stats = conditional_forward_into(tree, &self.topo, &act, xb, &mut out, None);
                            reached += stats.leaves;
                        }
                    }
                    Activation::Logistic(_) => {
                        let mut dots = vec![0.0; self.topo.num_internal()];
                        dense_forward_into(tree, &self.topo, &self.activation, xb, &mut out, &mut dots);
                        reached += self.topo.num_leaves();
                        if mode == Mode::Train {
                            traces.push(TreeTrace::Dense(dots));
                        }
                    }
                }
            }
            (out, traces, reached)
        });
        let mut logits = Matrix::zeros(x.rows(), k);
        let mut traces = Vec::with_capacity(if mode == Mode::Train { x.rows() } else { 0 });
        let mut reachable_leaves = 0;
        for (b, (out, tr, reached)) in per_sample.into_iter().enumerate() {
            logits.row_mut(b).copy_from_slice(&out);
            if mode == Mode::Train {
                traces.push(tr);
            }
            reachable_leaves += reached;
        }
        Ok(EnsembleForward {
            logits,
            traces,
            reachable_leaves,
        })
    }

    /// Backpropagates `dl_dt` (the gradient of the batch objective with
    /// respect to each row of logits) through the layer.
    ///
    /// Each tree folds its per-sample contributions in ascending sample
    /// order, so the result does not depend on the worker count. Row `b`
    /// of `d_x` sums the input gradients of all trees.
    pub fn backward(
        &self,
        x: &Matrix,
        fwd: &EnsembleForward,
        dl_dt: &Matrix,
        par: &Parallelism,
    ) -> Result<EnsembleGradients> {
        self.check_batch(x)?;
        let batch = x.rows();
        if fwd.traces.len() != batch || fwd.traces.iter().any(|t| t.len() != self.trees.len()) {
            return Err(Error::MalformedTrace(
                "traces do not match this batch and ensemble (was the forward pass run in train mode?)"
                    .into(),
            ));
        }
        if dl_dt.rows() != batch || dl_dt.cols() != self.output_dim {
            return Err(Error::DimensionMismatch {
                what: "logit gradient entries",
                expected: batch * self.output_dim,
                actual: dl_dt.rows() * dl_dt.cols(),
            });
        }
        let p = self.input_dim;
        let per_tree = par.map(self.trees.len(), |j| -> Result<(TreeGradBuffers, Matrix, usize)> {
            let tree = &self.trees[j];
            let mut bufs = TreeGradBuffers {
                d_w: Matrix::zeros(self.topo.num_internal(), p),
                d_o: Matrix::zeros(self.topo.num_leaves(), self.output_dim),
            };
            let mut d_x = Matrix::zeros(batch, p);
            let mut visits = 0;
            for b in 0..batch {
                let xb = x.row(b);
                match &fwd.traces[b][j] {
                    TreeTrace::Conditional(trace) => {
                        visits += conditional_backward_accumulate(
                            tree,
                            xb,
                            trace,
                            dl_dt.row(b),
                            d_x.row_mut(b),
                            &mut bufs.d_w,
                            &mut bufs.d_o,
                        )?;
                    }
                    TreeTrace::Dense(dots) => {
                        dense_backward_from_dots(
                            tree,
                            &self.topo,
                            &self.activation,
                            xb,
                            dots,
                            dl_dt.row(b),
                            d_x.row_mut(b),
                            &mut bufs.d_w,
                            &mut bufs.d_o,
                        );
                        visits += self.topo.num_nodes();
                    }
                }
            }
            Ok((bufs, d_x, visits))
        });
        let mut trees = Vec::with_capacity(self.trees.len());
        let mut d_x = Matrix::zeros(batch, p);
        let mut backward_visits = 0;
        for result in per_tree {
            let (bufs, tree_dx, visits) = result?;
            axpy(d_x.as_mut_slice(), 1.0, tree_dx.as_slice());
            trees.push(bufs);
            backward_visits += visits;
        }
        Ok(EnsembleGradients {
            trees,
            d_x,
            backward_visits,
        })
    }

    /// `lambda * sum_j ||W_j||^2`.
    pub fn l2_penalty(&self, lambda: f64) -> f64 {
        lambda * self.trees.iter().map(|t| t.w.squared_norm()).sum::<f64>()
    }
}

/// Adds `2 lambda w_i` to every hyperplane gradient row. Leaves are not
/// regularized.
pub fn add_l2_gradient(grads: &mut EnsembleGradients, ens: &Ensemble, lambda: f64) -> Result<()> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!("L2 strength must be >= 0, got {lambda}")));
    }
    if lambda == 0.0 {
        return Ok(());
    }
    for (g, t) in grads.trees.iter_mut().zip(&ens.trees) {
        axpy(g.d_w.as_mut_slice(), 2.0 * lambda, t.w.as_slice());
    }
    Ok(())
}
