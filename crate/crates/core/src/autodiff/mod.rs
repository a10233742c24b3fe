//! Reverse-mode automatic differentiation on a flat tape.
//!
//! Define-by-run: every operation appends a node holding its forward value
//! plus the metadata needed to replay its backward rule. All tensors are f32
//! row-major matrices `[rows, cols]`; scalars are `[1, 1]`. Backward walks
//! the tape once in reverse and accumulates gradients into a parallel arena,
//! so reading values never conflicts with writing grads.
//!
//! Gradient correctness is not assumed: `gradcheck` re-evaluates any recorded
//! graph in 64-bit precision with naive kernels and compares central finite
//! differences against `backward()`.

pub mod adamw;
pub mod gradcheck;
pub(crate) mod ops;

pub use adamw::{AdamW, AdamWConfig};
pub use ops::MASK_NEG;
pub(crate) use ops::Op;

use crate::error::HepaError;

/// Handle into a [`Tape`]'s node arena.
pub type TensorId = usize;

/// One node of the computation graph: forward value plus provenance.
///
/// `grad` lives in the tape's parallel arena, lazily allocated during
/// backward; query it through [`Tape::grad`].
#[derive(Debug, Clone)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f32>,
    pub requires_grad: bool,
    pub(crate) op: Op,
}

impl Tensor {
    pub fn numel(&self) -> usize {
        self.rows * self.cols
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    pub(crate) nodes: Vec<Tensor>,
    grads: Vec<Option<Vec<f32>>>,
    consumed: bool,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    // ── Leaves ──────────────────────────────────────────────────────────

    /// Registers an input tensor. `requires_grad` marks it as a gradient
    /// target; constants should pass `false` so backward skips them.
    pub fn leaf(&mut self, values: Vec<f32>, rows: usize, cols: usize, requires_grad: bool) -> TensorId {
        assert_eq!(values.len(), rows * cols, "leaf value length must match shape");
        assert!(rows > 0 && cols > 0, "leaf shape must be non-empty");
        self.push(Tensor { rows, cols, values, requires_grad, op: Op::Leaf })
    }

    pub fn constant(&mut self, values: Vec<f32>, rows: usize, cols: usize) -> TensorId {
        self.leaf(values, rows, cols, false)
    }

    pub fn scalar(&mut self, v: f32) -> TensorId {
        self.leaf(vec![v], 1, 1, false)
    }

    pub(crate) fn push(&mut self, t: Tensor) -> TensorId {
        assert!(!self.consumed, "tape already consumed by backward(); build a fresh tape");
        self.nodes.push(t);
        self.grads.push(None);
        self.nodes.len() - 1
    }

    // ── Accessors ───────────────────────────────────────────────────────

    pub fn values(&self, id: TensorId) -> &[f32] {
        &self.nodes[id].values
    }

    pub fn shape(&self, id: TensorId) -> (usize, usize) {
        (self.nodes[id].rows, self.nodes[id].cols)
    }

    pub fn scalar_value(&self, id: TensorId) -> f32 {
        assert_eq!(self.nodes[id].numel(), 1, "scalar_value on non-scalar tensor");
        self.nodes[id].values[0]
    }

    /// Gradient of `id` if backward touched it. Leaves that require grad but
    /// did not participate in the loss keep `None`, which reads as zero.
    pub fn grad(&self, id: TensorId) -> Option<&[f32]> {
        self.grads[id].as_deref()
    }

    pub fn grad_or_zeros(&self, id: TensorId) -> Vec<f32> {
        match &self.grads[id] {
            Some(g) => g.clone(),
            None => vec![0.0; self.nodes[id].numel()],
        }
    }

    /// Disjoint views for backward: immutable node values, mutable grads.
    pub(crate) fn split_mut(&mut self) -> (&[Tensor], &mut [Option<Vec<f32>>]) {
        let Tape { nodes, grads, .. } = self;
        (nodes.as_slice(), grads.as_mut_slice())
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Reverse-walks the tape from `loss`, accumulating gradients into every
    /// `requires_grad` node on its path. `loss` must be a scalar. The tape is
    /// consumed: recording or a second backward afterwards is an error.
    pub fn backward(&mut self, loss: TensorId) -> Result<(), HepaError> {
        if self.consumed {
            return Err(HepaError::contract("backward() called twice on one tape"));
        }
        if self.nodes[loss].numel() != 1 {
            return Err(HepaError::contract(format!(
                "backward() needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if !self.nodes[loss].requires_grad {
            return Err(HepaError::contract(
                "backward() on a tensor with no gradient path to any requires_grad leaf",
            ));
        }
        self.consumed = true;
        self.grads[loss] = Some(vec![1.0]);
        for id in (0..=loss).rev() {
            if self.grads[id].is_none() || matches!(self.nodes[id].op, Op::Leaf) {
                continue;
            }
            let g = self.grads[id].take().expect("checked above");
            let op = self.nodes[id].op.clone();
            ops::backward_op(self, id, &op, &g);
            self.grads[id] = Some(g);
        }
        Ok(())
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    /// True when both inputs require grad propagation stops at constants.
    pub(crate) fn any_requires(&self, ids: &[TensorId]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }
}
