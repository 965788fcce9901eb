//! Gradients of a single tree.
//!
//! [`conditional_backward`] walks the fractional tree recorded by the
//! conditional forward pass in post order, touching `2U - 1` nodes.
//! [`dense_backward`] applies the chain rule over the whole tree and
//! [`fd_gradients`] differentiates [`dense_forward`] numerically; both
//! exist to check the conditional pass.

use crate::activation::{Activation, Split};
use crate::error::{Error, Result};
use crate::forward::{
    check_shapes, compute_dots, dense_forward, node_probs, FracChild, ForwardTrace,
};
use crate::matrix::{axpy, dot, Matrix};
use crate::tree::{NodeId, TreeParams, TreeTopology};

/// Row-sparse gradient block: `index[r]` owns `values[r * width..(r + 1) * width]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseRows {
    pub width: usize,
    pub index: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseRows {
    pub fn new(width: usize) -> Self {
        Self {
            width,
            index: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.index
            .iter()
            .copied()
            .zip(self.values.chunks_exact(self.width.max(1)))
    }

    pub fn get(&self, idx: usize) -> Option<&[f64]> {
        self.iter().find(|(i, _)| *i == idx).map(|(_, row)| row)
    }

    fn push_scaled(&mut self, idx: usize, scale: f64, src: &[f64]) {
        self.index.push(idx);
        self.values.extend(src.iter().map(|v| scale * v));
    }

    /// `dst[idx] += row` for every stored row.
    pub fn add_into(&self, dst: &mut Matrix) {
        for (i, row) in self.iter() {
            axpy(dst.row_mut(i), 1.0, row);
        }
    }
}

/// Per-sample gradients from the conditional backward pass. `d_w` rows are
/// keyed by internal heap index, `d_o` rows by leaf index; rows absent from
/// either are exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeGradients {
    pub d_x: Vec<f64>,
    pub d_w: SparseRows,
    pub d_o: SparseRows,
    /// Fractional-tree nodes visited by the backward walk.
    pub visited: usize,
}

impl TreeGradients {
    pub fn to_dense(&self, topo: &TreeTopology) -> DenseGradients {
        let mut d_w = Matrix::zeros(topo.num_internal(), self.d_w.width);
        let mut d_o = Matrix::zeros(topo.num_leaves(), self.d_o.width);
        self.d_w.add_into(&mut d_w);
        self.d_o.add_into(&mut d_o);
        DenseGradients {
            d_x: self.d_x.clone(),
            d_w,
            d_o,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGradients {
    pub d_x: Vec<f64>,
    pub d_w: Matrix,
    pub d_o: Matrix,
}

/// Internal node of the fractional tree.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FracInternal {
    pub node: NodeId,
    pub dot: f64,
    pub split: Split,
    pub left: FracChild,
    pub right: FracChild,
    pub sum_g: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FracLeaf {
    pub leaf: usize,
    pub prob: f64,
    pub sum_g: f64,
}

/// Reachable tree with every hard-routing internal node spliced out.
/// Child indices refer to `internal` and `leaves`.
#[derive(Debug, Clone, PartialEq)]
pub struct FractionalTree {
    pub internal: Vec<FracInternal>,
    pub leaves: Vec<FracLeaf>,
    pub root: FracChild,
}

fn heap_node(depth: usize, c: FracChild, trace: &ForwardTrace) -> usize {
    match c {
        FracChild::Internal(f) => trace.fractional_nodes[f].node.0,
        FracChild::Leaf(j) => (1 << depth) - 1 + trace.reachable_leaves[j].leaf,
    }
}

/// `true` if heap node `desc` lies in the `side` subtree of heap node `anc`.
fn in_subtree(anc: usize, side: usize, mut desc: usize) -> bool {
    let child = 2 * anc + 1 + side;
    while desc > child {
        desc = (desc - 1) / 2;
    }
    desc == child
}

/// Validates the edges recorded during the forward pass and assembles the
/// fractional tree (with zeroed accumulators).
pub fn build_fractional_tree(trace: &ForwardTrace) -> Result<FractionalTree> {
    let n_frac = trace.fractional_nodes.len();
    let n_leaves = trace.reachable_leaves.len();
    let bad = |msg: String| Error::MalformedTrace(msg);
    if trace.frac_edges.len() != n_frac {
        return Err(bad(format!(
            "{} edge slots for {n_frac} fractional nodes",
            trace.frac_edges.len()
        )));
    }
    if n_leaves == 0 || n_frac + 1 != n_leaves {
        return Err(bad(format!(
            "expected |F| = U - 1, got |F| = {n_frac}, U = {n_leaves}"
        )));
    }
    let root = trace.frac_root.ok_or_else(|| bad("missing root".into()))?;
    let mut seen_internal = vec![false; n_frac];
    let mut seen_leaf = vec![false; n_leaves];
    let mut mark = |c: FracChild| -> Result<()> {
        let slot = match c {
            FracChild::Internal(f) if f < n_frac => &mut seen_internal[f],
            FracChild::Leaf(j) if j < n_leaves => &mut seen_leaf[j],
            other => return Err(bad(format!("dangling child {other:?}"))),
        };
        if std::mem::replace(slot, true) {
            return Err(bad(format!("child {c:?} has two parents")));
        }
        Ok(())
    };
    mark(root)?;
    let mut internal = Vec::with_capacity(n_frac);
    for (f, (node, edges)) in trace.fractional_nodes.iter().zip(&trace.frac_edges).enumerate() {
        let (Some(left), Some(right)) = (edges[0], edges[1]) else {
            return Err(bad(format!("fractional node {} lacks a child", node.node)));
        };
        for (side, c) in [(0, left), (1, right)] {
            mark(c)?;
            if !in_subtree(node.node.0, side, heap_node(trace.depth, c, trace)) {
                return Err(bad(format!(
                    "child {c:?} of fractional entry {f} is not in its subtree"
                )));
            }
        }
        internal.push(FracInternal {
            node: node.node,
            dot: node.dot,
            split: node.split,
            left,
            right,
            sum_g: 0.0,
        });
    }
    let leaves = trace
        .reachable_leaves
        .iter()
        .map(|l| FracLeaf {
            leaf: l.leaf,
            prob: l.prob,
            sum_g: 0.0,
        })
        .collect();
    Ok(FractionalTree {
        internal,
        leaves,
        root,
    })
}

fn check_trace(params: &TreeParams, trace: &ForwardTrace) -> Result<()> {
    let n_internal = params.w.rows();
    let n_leaves = params.o.rows();
    if n_leaves != 1 << trace.depth {
        return Err(Error::MalformedTrace(format!(
            "trace depth {} does not match {n_leaves} leaves",
            trace.depth
        )));
    }
    if let Some(f) = trace.fractional_nodes.iter().find(|f| f.node.0 >= n_internal) {
        return Err(Error::MalformedTrace(format!("node {} is not internal", f.node)));
    }
    if let Some(l) = trace.reachable_leaves.iter().find(|l| l.leaf >= n_leaves) {
        return Err(Error::MalformedTrace(format!("leaf {} out of range", l.leaf)));
    }
    Ok(())
}

/// Post-order walk of the fractional tree.
///
/// Leaves emit `dL/do_l = dL/dT * P(x -> l)` and `g(l) = P(x -> l) <dL/dT, o_l>`.
/// A fractional node combines its children's `sum_g` with
/// `mu1 = S'/S` and `mu2 = S'/(1 - S)` into `c = mu1 * left - mu2 * right`,
/// giving `dL/dw_i = c x` and a `c w_i` contribution to `dL/dx`.
pub fn conditional_backward(
    params: &TreeParams,
    x: &[f64],
    trace: &ForwardTrace,
    dl_dt: &[f64],
) -> Result<TreeGradients> {
    if x.len() != params.input_dim() {
        return Err(Error::DimensionMismatch {
            what: "input features",
            expected: params.input_dim(),
            actual: x.len(),
        });
    }
    if dl_dt.len() != params.output_dim() {
        return Err(Error::DimensionMismatch {
            what: "output gradient",
            expected: params.output_dim(),
            actual: dl_dt.len(),
        });
    }
    check_trace(params, trace)?;
    conditional_backward_unchecked(params, x, trace, dl_dt)
}

pub(crate) fn conditional_backward_unchecked(
    params: &TreeParams,
    x: &[f64],
    trace: &ForwardTrace,
    dl_dt: &[f64],
) -> Result<TreeGradients> {
    let p = params.input_dim();
    let k = params.output_dim();
    let n_frac = trace.fractional_nodes.len();
    let n_leaves = trace.reachable_leaves.len();
    let mut d_x = vec![0.0; p];
    let mut d_w = SparseRows::new(p);
    let mut d_o = SparseRows::new(k);
    d_w.index.reserve(n_frac);
    d_w.values.reserve(n_frac * p);
    d_o.index.reserve(n_leaves);
    d_o.values.reserve(n_leaves * k);
    let visited = walk_fractional_tree(
        params,
        trace,
        dl_dt,
        &mut d_x,
        |node, c| d_w.push_scaled(node, c, x),
        |leaf, prob| d_o.push_scaled(leaf, prob, dl_dt),
    )?;
    Ok(TreeGradients {
        d_x,
        d_w,
        d_o,
        visited,
    })
}

/// Adds one sample's gradients into dense per-tree buffers; returns the
/// number of fractional-tree nodes visited.
pub(crate) fn conditional_backward_accumulate(
    params: &TreeParams,
    x: &[f64],
    trace: &ForwardTrace,
    dl_dt: &[f64],
    d_x: &mut [f64],
    d_w: &mut Matrix,
    d_o: &mut Matrix,
) -> Result<usize> {
    walk_fractional_tree(
        params,
        trace,
        dl_dt,
        d_x,
        |node, c| axpy(d_w.row_mut(node), c, x),
        |leaf, prob| axpy(d_o.row_mut(leaf), prob, dl_dt),
    )
}

/// Core of the conditional backward pass. `on_node(i, c)` receives
/// `dL/dw_i = c x`; `on_leaf(l, P)` receives `dL/do_l = P dL/dT`.
fn walk_fractional_tree(
    params: &TreeParams,
    trace: &ForwardTrace,
    dl_dt: &[f64],
    d_x: &mut [f64],
    mut on_node: impl FnMut(usize, f64),
    mut on_leaf: impl FnMut(usize, f64),
) -> Result<usize> {
    let n_frac = trace.fractional_nodes.len();
    let n_leaves = trace.reachable_leaves.len();
    let malformed = || Error::MalformedTrace("fractional tree is incomplete".into());
    let root = trace.frac_root.ok_or_else(malformed)?;
    let mut frac_sum = vec![0.0; n_frac];
    let mut leaf_sum = vec![0.0; n_leaves];
    let sum_of = |c: FracChild, frac_sum: &[f64], leaf_sum: &[f64]| match c {
        FracChild::Internal(f) => frac_sum[f],
        FracChild::Leaf(j) => leaf_sum[j],
    };

    let mut visited = 0;
    let mut internal_visited = 0;
    let mut stack: Vec<(FracChild, bool)> = Vec::with_capacity(2 * trace.depth + 2);
    stack.push((root, false));
    while let Some((child, expanded)) = stack.pop() {
        match child {
            FracChild::Leaf(j) => {
                let visit = trace.reachable_leaves.get(j).ok_or_else(malformed)?;
                on_leaf(visit.leaf, visit.prob);
                leaf_sum[j] = visit.prob * dot(dl_dt, params.o.row(visit.leaf));
                visited += 1;
            }
            FracChild::Internal(f) => {
                let edges = trace.frac_edges.get(f).ok_or_else(malformed)?;
                let (Some(left), Some(right)) = (edges[0], edges[1]) else {
                    return Err(malformed());
                };
                if !expanded {
                    stack.push((child, true));
                    stack.push((right, false));
                    stack.push((left, false));
                    continue;
                }
                let node = &trace.fractional_nodes[f];
                let split = node.split;
                let left_sum = sum_of(left, &frac_sum, &leaf_sum);
                let right_sum = sum_of(right, &frac_sum, &leaf_sum);
                let a = split.slope / split.left * left_sum;
                let b = split.slope / split.right * right_sum;
                let c = a - b;
                axpy(d_x, c, params.w.row(node.node.0));
                on_node(node.node.0, c);
                frac_sum[f] = left_sum + right_sum;
                visited += 1;
                internal_visited += 1;
            }
        }
    }
    if visited != 2 * n_leaves - 1
        || internal_visited != n_frac
        || visited > trace.visited_internal + trace.visited_leaves
    {
        return Err(Error::MalformedTrace(format!(
            "backward visited {visited} nodes for U = {n_leaves}, |F| = {n_frac}, N = {}",
            trace.visited_internal
        )));
    }
    Ok(visited)
}

/// Runs [`conditional_backward`] while filling the accumulators of an
/// explicitly built [`FractionalTree`]; mostly useful for inspection.
pub fn annotate_fractional_tree(
    tree: &mut FractionalTree,
    params: &TreeParams,
    dl_dt: &[f64],
) {
    for leaf in &mut tree.leaves {
        leaf.sum_g = leaf.prob * dot(dl_dt, params.o.row(leaf.leaf));
    }
    // children always follow their parent in `internal`, so a reverse
    // sweep sees both children first
    for f in (0..tree.internal.len()).rev() {
        let get = |c: FracChild, t: &FractionalTree| match c {
            FracChild::Internal(i) => t.internal[i].sum_g,
            FracChild::Leaf(j) => t.leaves[j].sum_g,
        };
        let s = get(tree.internal[f].left, tree) + get(tree.internal[f].right, tree);
        tree.internal[f].sum_g = s;
    }
}

/// Full chain rule over all `2^d` leaves and all internal nodes.
///
/// With `P_i` the reach probability of node `i` and
/// `D_v = sum over leaves l below v of P(v -> l) <dL/dT, o_l>`, the
/// derivative with respect to `<w_i, x>` is `P_i S'_i (D_left - D_right)`.
/// No division by activation values is involved.
pub fn dense_backward(
    params: &TreeParams,
    topo: &TreeTopology,
    act: &Activation,
    x: &[f64],
    dl_dt: &[f64],
) -> Result<DenseGradients> {
    check_shapes(params, topo, x)?;
    if dl_dt.len() != params.output_dim() {
        return Err(Error::DimensionMismatch {
            what: "output gradient",
            expected: params.output_dim(),
            actual: dl_dt.len(),
        });
    }
    let mut dots = vec![0.0; topo.num_internal()];
    compute_dots(params, x, &mut dots);
    let mut grads = DenseGradients {
        d_x: vec![0.0; params.input_dim()],
        d_w: Matrix::zeros(topo.num_internal(), params.input_dim()),
        d_o: Matrix::zeros(topo.num_leaves(), params.output_dim()),
    };
    dense_backward_from_dots(
        params,
        topo,
        act,
        x,
        &dots,
        dl_dt,
        &mut grads.d_x,
        &mut grads.d_w,
        &mut grads.d_o,
    );
    Ok(grads)
}

/// Accumulates (`+=`) the dense gradients for one sample.
#[allow(clippy::too_many_arguments)]
pub(crate) fn dense_backward_from_dots(
    params: &TreeParams,
    topo: &TreeTopology,
    act: &Activation,
    x: &[f64],
    dots: &[f64],
    dl_dt: &[f64],
    d_x: &mut [f64],
    d_w: &mut Matrix,
    d_o: &mut Matrix,
) {
    let n_internal = topo.num_internal();
    let splits: Vec<Split> = dots.iter().map(|&d| act.split(d)).collect();
    let mut probs = Vec::new();
    node_probs(topo, act, dots, &mut probs);
    let mut down = vec![0.0; topo.num_nodes()];
    for leaf in 0..topo.num_leaves() {
        let o = params.o.row(leaf);
        down[n_internal + leaf] = dot(dl_dt, o);
        axpy(d_o.row_mut(leaf), probs[n_internal + leaf], dl_dt);
    }
    for i in (0..n_internal).rev() {
        down[i] = splits[i].left * down[2 * i + 1] + splits[i].right * down[2 * i + 2];
    }
    for i in 0..n_internal {
        let c = probs[i] * splits[i].slope * (down[2 * i + 1] - down[2 * i + 2]);
        if c != 0.0 {
            axpy(d_x, c, params.w.row(i));
            axpy(d_w.row_mut(i), c, x);
        }
    }
}

/// Scalar losses of a single tree output, used to probe gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProbeLoss {
    SumOfLogits,
    SquaredNorm,
    SoftmaxCrossEntropy { label: usize },
}

impl ProbeLoss {
    pub fn value(&self, t: &[f64]) -> f64 {
        match *self {
            ProbeLoss::SumOfLogits => t.iter().sum(),
            ProbeLoss::SquaredNorm => t.iter().map(|v| v * v).sum(),
            ProbeLoss::SoftmaxCrossEntropy { label } => {
                let m = t.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + t.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                lse - t[label]
            }
        }
    }

    pub fn grad(&self, t: &[f64]) -> Vec<f64> {
        match *self {
            ProbeLoss::SumOfLogits => vec![1.0; t.len()],
            ProbeLoss::SquaredNorm => t.iter().map(|v| 2.0 * v).collect(),
            ProbeLoss::SoftmaxCrossEntropy { label } => {
                let m = t.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = t.iter().map(|v| (v - m).exp()).collect();
                let z: f64 = e.iter().sum();
                e.iter()
                    .enumerate()
                    .map(|(c, v)| v / z - if c == label { 1.0 } else { 0.0 })
                    .collect()
            }
        }
    }
}

/// Central-difference gradients plus, per coordinate, whether the
/// perturbation may cross a saturation boundary of the smooth step.
#[derive(Debug, Clone)]
pub struct FdGradients {
    pub grads: DenseGradients,
    pub flag_x: Vec<bool>,
    /// Row-major `|I| x p`, parallel to `grads.d_w`.
    pub flag_w: Vec<bool>,
}

#[inline]
pub fn fd_step(theta: f64) -> f64 {
    1e-6 * theta.abs().max(1.0)
}

/// Numerically differentiates `loss(dense_forward(params, x))` with
/// respect to every coordinate of `x`, `W` and `O`.
pub fn fd_gradients(
    params: &TreeParams,
    topo: &TreeTopology,
    act: &Activation,
    x: &[f64],
    loss: &dyn Fn(&[f64]) -> f64,
) -> Result<FdGradients> {
    check_shapes(params, topo, x)?;
    let p = params.input_dim();
    let eval = |params: &TreeParams, x: &[f64]| -> Result<f64> {
        Ok(loss(&dense_forward(params, topo, act, x)?.logits))
    };
    let mut dots = vec![0.0; topo.num_internal()];
    compute_dots(params, x, &mut dots);
    let near_boundary = |d: f64, reach: f64| match act {
        Activation::SmoothStep(s) => {
            let half = 0.5 * s.gamma();
            (d - half).abs() < reach || (d + half).abs() < reach
        }
        Activation::Logistic(_) => false,
    };

    let mut grads = DenseGradients {
        d_x: vec![0.0; p],
        d_w: Matrix::zeros(topo.num_internal(), p),
        d_o: Matrix::zeros(topo.num_leaves(), params.output_dim()),
    };
    let mut flag_x = vec![false; p];
    let mut flag_w = vec![false; topo.num_internal() * p];

    let mut xp = x.to_vec();
    for j in 0..p {
        let h = fd_step(x[j]);
        xp[j] = x[j] + h;
        let up = eval(params, &xp)?;
        xp[j] = x[j] - h;
        let down = eval(params, &xp)?;
        xp[j] = x[j];
        grads.d_x[j] = (up - down) / (2.0 * h);
        flag_x[j] = (0..topo.num_internal())
            .any(|i| near_boundary(dots[i], 10.0 * h * params.w.get(i, j).abs().max(1.0)));
    }

    let mut work = params.clone();
    for i in 0..topo.num_internal() {
        for j in 0..p {
            let theta = params.w.get(i, j);
            let h = fd_step(theta);
            work.w.set(i, j, theta + h);
            let up = eval(&work, x)?;
            work.w.set(i, j, theta - h);
            let down = eval(&work, x)?;
            work.w.set(i, j, theta);
            grads.d_w.set(i, j, (up - down) / (2.0 * h));
            flag_w[i * p + j] = near_boundary(dots[i], 10.0 * h * x[j].abs().max(1.0));
        }
    }
    for l in 0..topo.num_leaves() {
        for c in 0..params.output_dim() {
            let theta = params.o.get(l, c);
            let h = fd_step(theta);
            work.o.set(l, c, theta + h);
            let up = eval(&work, x)?;
            work.o.set(l, c, theta - h);
            let down = eval(&work, x)?;
            work.o.set(l, c, theta);
            grads.d_o.set(l, c, (up - down) / (2.0 * h));
        }
    }
    Ok(FdGradients {
        grads,
        flag_x,
        flag_w,
    })
}
