//! Perfect binary tree topology in heap order and per-tree parameters.
//!
//! The root is node 0 and the children of internal node `i` are `2i + 1`
//! and `2i + 2`. Internal nodes occupy `0..2^d - 1`; leaf `l` lives at
//! heap index `2^d - 1 + l`, so the bits of `l` (most significant first)
//! spell out its root-to-leaf path, 0 meaning left.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Deepest tree we agree to build; leaf indices must fit comfortably in `usize`.
pub const MAX_DEPTH: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeTopology {
    depth: usize,
}

impl TreeTopology {
    pub fn new(depth: usize) -> Result<Self> {
        if depth == 0 || depth > MAX_DEPTH {
            return Err(Error::InvalidParameter(format!(
                "tree depth must be in 1..={MAX_DEPTH}, got {depth}"
            )));
        }
        Ok(Self { depth })
    }

    #[inline]
    pub fn depth(&self) -> usize {
        self.depth
    }

    #[inline]
    pub fn num_internal(&self) -> usize {
        (1 << self.depth) - 1
    }

    #[inline]
    pub fn num_leaves(&self) -> usize {
        1 << self.depth
    }

    #[inline]
    pub fn num_nodes(&self) -> usize {
        (1 << (self.depth + 1)) - 1
    }

    #[inline]
    pub fn is_internal(&self, node: NodeId) -> bool {
        node.0 < self.num_internal()
    }

    #[inline]
    pub fn leaf_node(&self, leaf: usize) -> NodeId {
        NodeId(self.num_internal() + leaf)
    }

    /// Leaf index of a heap node, if it is a leaf.
    #[inline]
    pub fn leaf_index(&self, node: NodeId) -> Option<usize> {
        (node.0 >= self.num_internal() && node.0 < self.num_nodes())
            .then(|| node.0 - self.num_internal())
    }

    pub fn left(&self, node: NodeId) -> Result<NodeId> {
        self.check_internal(node)?;
        Ok(NodeId(2 * node.0 + 1))
    }

    pub fn right(&self, node: NodeId) -> Result<NodeId> {
        self.check_internal(node)?;
        Ok(NodeId(2 * node.0 + 2))
    }

    fn check_internal(&self, node: NodeId) -> Result<()> {
        if node.0 >= self.num_nodes() {
            return Err(Error::InvalidParameter(format!(
                "node {node} out of range for depth {}",
                self.depth
            )));
        }
        if !self.is_internal(node) {
            return Err(Error::LeafHasNoChildren(node.0));
        }
        Ok(())
    }

    /// Level of a heap node (root = 0).
    #[inline]
    pub fn level(node: NodeId) -> usize {
        (usize::BITS - 1 - (node.0 + 1).leading_zeros()) as usize
    }

    /// Ancestors of a leaf, root first. Always `depth` nodes.
    pub fn ancestors(&self, leaf: usize) -> Vec<NodeId> {
        (0..self.depth)
            .map(|level| NodeId((1 << level) - 1 + (leaf >> (self.depth - level))))
            .collect()
    }

    /// Whether `leaf` sits in the left subtree of its ancestor `node`.
    pub fn is_left_subtree(&self, leaf: usize, node: NodeId) -> Result<bool> {
        if leaf >= self.num_leaves() {
            return Err(Error::InvalidParameter(format!(
                "leaf {leaf} out of range for depth {}",
                self.depth
            )));
        }
        if !self.is_internal(node) {
            return Err(Error::NotAnAncestor { node: node.0, leaf });
        }
        let level = Self::level(node);
        let offset = node.0 + 1 - (1 << level);
        if leaf >> (self.depth - level) != offset {
            return Err(Error::NotAnAncestor { node: node.0, leaf });
        }
        Ok((leaf >> (self.depth - level - 1)) & 1 == 0)
    }
}

/// Trainable state of one tree: hyperplanes `w` (`|I| x p`) and leaf
/// outputs `o` (`|L| x k`).
#[derive(Debug, Clone, PartialEq)]
pub struct TreeParams {
    pub w: Matrix,
    pub o: Matrix,
}

impl TreeParams {
    /// `w` uniform on `[-1/sqrt(p), 1/sqrt(p)]`, `o` zero.
    pub fn init(topo: &TreeTopology, p: usize, k: usize, seed: u64) -> Result<Self> {
        Self::init_scaled(topo, p, k, seed, 1.0)
    }

    /// Like [`TreeParams::init`] with the weight bound multiplied by `scale`.
    pub fn init_scaled(topo: &TreeTopology, p: usize, k: usize, seed: u64, scale: f64) -> Result<Self> {
        if p == 0 || k == 0 {
            return Err(Error::InvalidParameter(format!(
                "input and output dimensions must be >= 1, got p={p}, k={k}"
            )));
        }
        if !(scale.is_finite() && scale >= 0.0) {
            return Err(Error::InvalidParameter(format!("init scale must be >= 0, got {scale}")));
        }
        let bound = scale / (p as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = Matrix::zeros(topo.num_internal(), p);
        for v in w.as_mut_slice() {
            *v = if bound > 0.0 { rng.random_range(-bound..=bound) } else { 0.0 };
        }
        Ok(Self {
            w,
            o: Matrix::zeros(topo.num_leaves(), k),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.o.cols()
    }

    pub(crate) fn check(&self, topo: &TreeTopology) -> Result<()> {
        if self.w.rows() != topo.num_internal() {
            return Err(Error::DimensionMismatch {
                what: "hyperplane rows",
                expected: topo.num_internal(),
                actual: self.w.rows(),
            });
        }
        if self.o.rows() != topo.num_leaves() {
            return Err(Error::DimensionMismatch {
                what: "leaf rows",
                expected: topo.num_leaves(),
                actual: self.o.rows(),
            });
        }
        Ok(())
    }
}
