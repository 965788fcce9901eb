//! Per-sample tree evaluation.
//!
//! [`conditional_forward`] walks only the nodes a sample can reach and,
//! in training mode, records what the backward pass needs: reachable leaves
//! with their probabilities, fractional nodes with their cached dot
//! products, and the edges of the fractional tree. [`dense_forward`] visits
//! every node and is both the oracle and the logistic baseline.

use crate::activation::{Activation, SmoothStep, Split};
use crate::error::{Error, Result};
use crate::matrix::{axpy, dot};
use crate::tree::{NodeId, TreeParams, TreeTopology};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeafVisit {
    pub leaf: usize,
    pub prob: f64,
}

/// A reachable internal node whose routing is strictly fractional.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FracNode {
    pub node: NodeId,
    pub dot: f64,
    pub split: Split,
}

impl FracNode {
    /// `S(<w_i, x>)`.
    #[inline]
    pub fn s(&self) -> f64 {
        self.split.left
    }
}

/// Child reference inside the fractional tree. Indices point into
/// [`ForwardTrace::fractional_nodes`] and [`ForwardTrace::reachable_leaves`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FracChild {
    Internal(usize),
    Leaf(usize),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ForwardTrace {
    pub reachable_leaves: Vec<LeafVisit>,
    pub fractional_nodes: Vec<FracNode>,
    /// `[left, right]` children of each fractional node, parallel to `fractional_nodes`.
    pub frac_edges: Vec<[Option<FracChild>; 2]>,
    pub frac_root: Option<FracChild>,
    pub visited_internal: usize,
    pub visited_leaves: usize,
    /// Depth of the tree that produced the trace.
    pub depth: usize,
}

impl ForwardTrace {
    fn clear(&mut self) {
        self.reachable_leaves.clear();
        self.fractional_nodes.clear();
        self.frac_edges.clear();
        self.frac_root = None;
        self.visited_internal = 0;
        self.visited_leaves = 0;
    }

    fn attach(&mut self, parent: Option<(usize, usize)>, child: FracChild) {
        match parent {
            Some((f, side)) => self.frac_edges[f][side] = Some(child),
            None => self.frac_root = Some(child),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeOutput {
    pub logits: Vec<f64>,
}

/// Traversal counters: reachable leaves `U`, reachable internal nodes `N`
/// and fractional nodes `|F|`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReachStats {
    pub leaves: usize,
    pub internal: usize,
    pub fractional: usize,
}

pub(crate) fn check_shapes(params: &TreeParams, topo: &TreeTopology, x: &[f64]) -> Result<()> {
    params.check(topo)?;
    if x.len() != params.input_dim() {
        return Err(Error::DimensionMismatch {
            what: "input features",
            expected: params.input_dim(),
            actual: x.len(),
        });
    }
    Ok(())
}

/// Conditional forward pass with trace capture.
pub fn conditional_forward(
    params: &TreeParams,
    topo: &TreeTopology,
    act: &SmoothStep,
    x: &[f64],
) -> Result<(TreeOutput, ForwardTrace)> {
    check_shapes(params, topo, x)?;
    let mut logits = vec![0.0; params.output_dim()];
    let mut trace = ForwardTrace::default();
    conditional_forward_into(params, topo, act, x, &mut logits, Some(&mut trace));
    Ok((TreeOutput { logits }, trace))
}

/// Conditional forward pass without a trace; memory is the `O(d)` stack.
pub fn conditional_infer(
    params: &TreeParams,
    topo: &TreeTopology,
    act: &SmoothStep,
    x: &[f64],
) -> Result<(TreeOutput, ReachStats)> {
    check_shapes(params, topo, x)?;
    let mut logits = vec![0.0; params.output_dim()];
    let stats = conditional_forward_into(params, topo, act, x, &mut logits, None);
    Ok((TreeOutput { logits }, stats))
}

struct Pending {
    node: usize,
    prob: f64,
    /// Closest fractional ancestor (trace index) and the side we hang off it.
    parent: Option<(usize, usize)>,
}

/// Adds the tree output to `out` (unchecked shapes). Children are pushed
/// right first, so the left subtree is always explored first.
pub(crate) fn conditional_forward_into(
    params: &TreeParams,
    topo: &TreeTopology,
    act: &SmoothStep,
    x: &[f64],
    out: &mut [f64],
    mut trace: Option<&mut ForwardTrace>,
) -> ReachStats {
    if let Some(t) = trace.as_deref_mut() {
        t.clear();
    }
    let n_internal = topo.num_internal();
    let mut stack = Vec::with_capacity(topo.depth() + 1);
    stack.push(Pending {
        node: 0,
        prob: 1.0,
        parent: None,
    });
    let mut stats = ReachStats {
        leaves: 0,
        internal: 0,
        fractional: 0,
    };
    while let Some(Pending { node, prob, parent }) = stack.pop() {
        if node < n_internal {
            stats.internal += 1;
            let d = dot(params.w.row(node), x);
            let split = act.split(d);
            let mut links = (parent, parent);
            if split.is_fractional() {
                stats.fractional += 1;
                if let Some(t) = trace.as_deref_mut() {
                    let f = t.fractional_nodes.len();
                    t.fractional_nodes.push(FracNode {
                        node: NodeId(node),
                        dot: d,
                        split,
                    });
                    t.frac_edges.push([None, None]);
                    t.attach(parent, FracChild::Internal(f));
                    links = (Some((f, 0)), Some((f, 1)));
                }
            }
            if split.right > 0.0 {
                stack.push(Pending {
                    node: 2 * node + 2,
                    prob: prob * split.right,
                    parent: links.1,
                });
            }
            if split.left > 0.0 {
                stack.push(Pending {
                    node: 2 * node + 1,
                    prob: prob * split.left,
                    parent: links.0,
                });
            }
        } else {
            stats.leaves += 1;
            let leaf = node - n_internal;
            axpy(out, prob, params.o.row(leaf));
            if let Some(t) = trace.as_deref_mut() {
                let idx = t.reachable_leaves.len();
                t.reachable_leaves.push(LeafVisit { leaf, prob });
                t.attach(parent, FracChild::Leaf(idx));
            }
        }
    }
    if let Some(t) = trace {
        t.visited_internal = stats.internal;
        t.visited_leaves = stats.leaves;
        t.depth = topo.depth();
    }
    stats
}

pub fn reachable_stats(trace: &ForwardTrace) -> ReachStats {
    ReachStats {
        leaves: trace.visited_leaves,
        internal: trace.visited_internal,
        fractional: trace.fractional_nodes.len(),
    }
}

/// Evaluates every node; returns the output.
pub fn dense_forward(
    params: &TreeParams,
    topo: &TreeTopology,
    act: &Activation,
    x: &[f64],
) -> Result<TreeOutput> {
    check_shapes(params, topo, x)?;
    let mut logits = vec![0.0; params.output_dim()];
    let mut dots = vec![0.0; topo.num_internal()];
    dense_forward_into(params, topo, act, x, &mut logits, &mut dots);
    Ok(TreeOutput { logits })
}

pub(crate) fn compute_dots(params: &TreeParams, x: &[f64], dots: &mut [f64]) {
    for (i, d) in dots.iter_mut().enumerate() {
        *d = dot(params.w.row(i), x);
    }
}

/// Top-down reach probabilities for all nodes given precomputed dots.
pub(crate) fn node_probs(topo: &TreeTopology, act: &Activation, dots: &[f64], probs: &mut Vec<f64>) {
    probs.clear();
    probs.resize(topo.num_nodes(), 0.0);
    probs[0] = 1.0;
    for i in 0..topo.num_internal() {
        let split = act.split(dots[i]);
        probs[2 * i + 1] = probs[i] * split.left;
        probs[2 * i + 2] = probs[i] * split.right;
    }
}

/// Dense pass adding into `out`; fills `dots` with every `<w_i, x>`.
pub(crate) fn dense_forward_into(
    params: &TreeParams,
    topo: &TreeTopology,
    act: &Activation,
    x: &[f64],
    out: &mut [f64],
    dots: &mut [f64],
) {
    compute_dots(params, x, dots);
    let mut probs = Vec::new();
    node_probs(topo, act, dots, &mut probs);
    let first_leaf = topo.num_internal();
    for leaf in 0..topo.num_leaves() {
        axpy(out, probs[first_leaf + leaf], params.o.row(leaf));
    }
}
