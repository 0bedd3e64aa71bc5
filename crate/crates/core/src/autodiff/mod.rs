//! Define-by-run reverse-mode differentiation on dense tensors.
//!
//! A [`Tape`] records one forward pass as a sequence of nodes, each holding
//! its output value and the operation that produced it. Node ids are
//! monotonically increasing, so the tape is topologically ordered by
//! construction and [`Tape::backward`] is a single reverse sweep.
//!
//! The tape is rebuilt per forward pass; it is single-writer and must not
//! be shared across concurrent passes. Independent passes on disjoint
//! tapes may run concurrently.

mod conv;
mod elementwise;
mod graph_ops;
mod linalg;
mod reduce;
mod shape_ops;

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`]. Only valid for the tape that issued it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

/// Border handling for convolutions.
///
/// `Reflect` mirrors without repeating the edge sample
/// (`.. 2,1 | 0,1,2 .. | n-2,n-3`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    None,
    Zero,
    Reflect,
}

/// Elementwise activation kinds.
#[derive(Clone, Copy, Debug)]
pub enum Activation<T> {
    Relu,
    LeakyRelu(T),
}

/// CSR-style segmentation of a flat edge list: segment `n` spans
/// `offsets[n]..offsets[n+1]`. Segments may be empty or ragged.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segments {
    offsets: Vec<usize>,
}

impl Segments {
    pub fn from_offsets(offsets: Vec<usize>) -> Result<Self> {
        if offsets.is_empty() || offsets[0] != 0 {
            return Err(Error::arg("segment offsets must start at 0"));
        }
        if offsets.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::arg("segment offsets must be non-decreasing"));
        }
        Ok(Self { offsets })
    }

    /// Builds segments of identical length.
    pub fn uniform(count: usize, len: usize) -> Self {
        Self {
            offsets: (0..=count).map(|i| i * len).collect(),
        }
    }

    pub fn count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn total(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn range(&self, n: usize) -> std::ops::Range<usize> {
        self.offsets[n]..self.offsets[n + 1]
    }
}

/// One recorded operation. Variants carry parent ids plus whatever the
/// backward rule needs.
#[derive(Clone, Debug)]
pub(crate) enum Op<T> {
    Leaf,
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    Scale(TensorId, T),
    AddScalar(TensorId, T),
    Relu(TensorId),
    LeakyRelu(TensorId, T),
    Sum(TensorId),
    Mean(TensorId),
    L2Norm(TensorId),
    MatMul(TensorId, TensorId),
    AddRowBias(TensorId, TensorId),
    Conv2d {
        input: TensorId,
        kernel: TensorId,
        bias: Option<TensorId>,
        padding: Padding,
        stride: (usize, usize),
    },
    Conv2dInputGrad {
        grad_out: TensorId,
        kernel: TensorId,
        padding: Padding,
        stride: (usize, usize),
    },
    Conv3d {
        input: TensorId,
        kernel: TensorId,
        bias: Option<TensorId>,
        padding: Padding,
    },
    AvgPool2(TensorId),
    Reshape(TensorId),
    Swap01(TensorId),
    PixelsToRows(TensorId),
    RowsToPixels(TensorId),
    ConcatRows(Vec<TensorId>),
    SliceEntry {
        stack: TensorId,
        index: usize,
    },
    ReplaceEntry {
        stack: TensorId,
        slice: TensorId,
        index: usize,
    },
    GatherRows {
        source: TensorId,
        indices: Arc<Vec<usize>>,
    },
    PairDistance {
        centers: TensorId,
        neighbors: TensorId,
        segments: Arc<Segments>,
    },
    SegmentSoftmaxNeg {
        distances: TensorId,
        segments: Arc<Segments>,
    },
    SegmentMean {
        values: TensorId,
        segments: Arc<Segments>,
    },
    EdgeMatVec {
        matrices: TensorId,
        vectors: TensorId,
    },
    Fuse {
        non_local: TensorId,
        local: TensorId,
        context: TensorId,
        alpha: TensorId,
    },
    /// Forward `2x`, backward deliberately `3g`. Negative control for the
    /// finite-difference harness; never used by the model.
    BuggedScale(TensorId),
}

pub(crate) struct Node<T> {
    pub value: Tensor<T>,
    pub op: Op<T>,
    /// Whether a gradient can flow into or through this node.
    pub tracked: bool,
}

/// Records one forward pass.
pub struct Tape<T: Scalar> {
    pub(crate) nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    /// Registers an input value. Gradients are accumulated for it only when
    /// `requires_grad` is set.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> TensorId {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor<T>) -> TensorId {
        self.leaf(value, false)
    }

    pub fn value(&self, id: TensorId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// First node holding a non-finite value, with the offending flat index.
    pub fn first_non_finite(&self) -> Option<(TensorId, usize)> {
        self.nodes
            .iter()
            .enumerate()
            .find_map(|(i, n)| n.value.first_non_finite().map(|c| (TensorId(i), c)))
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, tracked: bool) -> TensorId {
        let id = TensorId(self.nodes.len());
        self.nodes.push(Node { value, op, tracked });
        id
    }

    pub(crate) fn tracked(&self, id: TensorId) -> bool {
        self.nodes[id.0].tracked
    }

    pub(crate) fn any_tracked(&self, ids: &[TensorId]) -> bool {
        ids.iter().any(|&id| self.tracked(id))
    }

    /// Reverse sweep from a scalar loss. Returns per-node gradients;
    /// nodes unreachable from the loss have no entry.
    pub fn backward(&self, loss: TensorId) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::arg(format!(
                "backward expects a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if grads[i].is_none() || !self.nodes[i].tracked {
                continue;
            }
            let (head, tail) = grads.split_at_mut(i);
            let g = tail[0].as_ref().unwrap();
            self.backward_step(i, g, head);
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.map(|v| Tensor::from_vec(self.nodes[i].value.shape(), v).unwrap()))
            .collect();
        Ok(Gradients { grads })
    }

    fn backward_step(&self, node: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        match &self.nodes[node].op {
            Op::Leaf => {}
            Op::Add(..)
            | Op::Sub(..)
            | Op::Mul(..)
            | Op::Scale(..)
            | Op::AddScalar(..)
            | Op::Relu(..)
            | Op::LeakyRelu(..)
            | Op::Fuse { .. }
            | Op::BuggedScale(..) => self.backward_elementwise(node, g, grads),
            Op::Sum(..) | Op::Mean(..) | Op::L2Norm(..) => self.backward_reduce(node, g, grads),
            Op::MatMul(..) | Op::AddRowBias(..) => self.backward_linalg(node, g, grads),
            Op::Conv2d { .. } | Op::Conv2dInputGrad { .. } | Op::Conv3d { .. } | Op::AvgPool2(..) => {
                self.backward_conv(node, g, grads)
            }
            Op::Reshape(..)
            | Op::Swap01(..)
            | Op::PixelsToRows(..)
            | Op::RowsToPixels(..)
            | Op::ConcatRows(..)
            | Op::SliceEntry { .. }
            | Op::ReplaceEntry { .. } => self.backward_shape(node, g, grads),
            Op::GatherRows { .. }
            | Op::PairDistance { .. }
            | Op::SegmentSoftmaxNeg { .. }
            | Op::SegmentMean { .. }
            | Op::EdgeMatVec { .. } => self.backward_graph(node, g, grads),
        }
    }
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to a node, if it was reached.
    pub fn wrt(&self, id: TensorId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradient with respect to a node; zeros of the given shape when the
    /// node was not reached by the sweep.
    pub fn wrt_or_zeros(&self, id: TensorId, shape: &[usize]) -> Tensor<T> {
        match self.wrt(id) {
            Some(g) => g.clone(),
            None => Tensor::zeros(shape),
        }
    }
}

/// Adds `src` into the gradient slot, initializing it to zeros first.
pub(crate) fn accumulate<T: Scalar>(slot: &mut Option<Vec<T>>, numel: usize, f: impl FnOnce(&mut [T])) {
    let buf = slot.get_or_insert_with(|| vec![T::zero(); numel]);
    f(buf);
}
