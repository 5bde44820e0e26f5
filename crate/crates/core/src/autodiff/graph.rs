use std::collections::BTreeMap;

use super::kernels::ConvGeom;
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
}

/// Operation tag used for instrumentation counters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpKind {
    Leaf,
    Conv2d,
    MaxPool,
    Upsample,
    Relu,
    Sigmoid,
    Tanh,
    SoftmaxSpatial,
    Concat,
    SliceChannels,
    MulMask,
    Add,
    Mul,
    Linear,
    GlobalAvgPool,
    PixelCrossEntropy,
    CrossEntropy,
    Scale,
    Sum,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Conv2d => "conv2d",
            OpKind::MaxPool => "maxpool2x2",
            OpKind::Upsample => "upsample_nearest2x",
            OpKind::Relu => "relu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Tanh => "tanh",
            OpKind::SoftmaxSpatial => "softmax_spatial",
            OpKind::Concat => "concat_channels",
            OpKind::SliceChannels => "slice_channels",
            OpKind::MulMask => "mul_broadcast_mask",
            OpKind::Add => "add",
            OpKind::Mul => "mul",
            OpKind::Linear => "linear",
            OpKind::GlobalAvgPool => "global_avg_pool",
            OpKind::PixelCrossEntropy => "pixelwise_cross_entropy",
            OpKind::CrossEntropy => "cross_entropy",
            OpKind::Scale => "scale",
            OpKind::Sum => "sum",
        }
    }
}

/// Recorded operation plus whatever the backward pass needs beyond input
/// and output values.
pub(crate) enum Op {
    Leaf,
    Conv2d { input: Var, weight: Var, bias: Var, geom: ConvGeom },
    MaxPool { input: Var, argmax: Vec<usize> },
    Upsample { input: Var },
    Activation { input: Var, kind: Activation },
    SoftmaxSpatial { input: Var },
    Concat { a: Var, b: Var },
    SliceChannels { input: Var, start: usize },
    MulMask { mask: Var, x: Var },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Linear { x: Var, weight: Var, bias: Var },
    GlobalAvgPool { input: Var },
    PixelCrossEntropy { logits: Var, target: Vec<usize>, probs: Vec<f64> },
    CrossEntropy { logits: Var, target: usize, probs: Vec<f64> },
    Scale { input: Var, factor: f64 },
    Sum { input: Var },
}

impl Op {
    pub(crate) fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::MaxPool { .. } => OpKind::MaxPool,
            Op::Upsample { .. } => OpKind::Upsample,
            Op::Activation { kind: Activation::Relu, .. } => OpKind::Relu,
            Op::Activation { kind: Activation::Sigmoid, .. } => OpKind::Sigmoid,
            Op::Activation { kind: Activation::Tanh, .. } => OpKind::Tanh,
            Op::SoftmaxSpatial { .. } => OpKind::SoftmaxSpatial,
            Op::Concat { .. } => OpKind::Concat,
            Op::SliceChannels { .. } => OpKind::SliceChannels,
            Op::MulMask { .. } => OpKind::MulMask,
            Op::Add { .. } => OpKind::Add,
            Op::Mul { .. } => OpKind::Mul,
            Op::Linear { .. } => OpKind::Linear,
            Op::GlobalAvgPool { .. } => OpKind::GlobalAvgPool,
            Op::PixelCrossEntropy { .. } => OpKind::PixelCrossEntropy,
            Op::CrossEntropy { .. } => OpKind::CrossEntropy,
            Op::Scale { .. } => OpKind::Scale,
            Op::Sum { .. } => OpKind::Sum,
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match *self {
            Op::Leaf => vec![],
            Op::Conv2d { input, weight, bias, .. } => vec![input, weight, bias],
            Op::MaxPool { input, .. }
            | Op::Upsample { input }
            | Op::Activation { input, .. }
            | Op::SoftmaxSpatial { input }
            | Op::SliceChannels { input, .. }
            | Op::GlobalAvgPool { input }
            | Op::Scale { input, .. }
            | Op::Sum { input } => vec![input],
            Op::Concat { a, b } | Op::Add { a, b } | Op::Mul { a, b } => vec![a, b],
            Op::MulMask { mask, x } => vec![mask, x],
            Op::Linear { x, weight, bias } => vec![x, weight, bias],
            Op::PixelCrossEntropy { logits, .. } | Op::CrossEntropy { logits, .. } => vec![logits],
        }
    }
}

pub(crate) struct Node {
    pub value: Tensor,
    pub op: Op,
    pub requires_grad: bool,
}

/// Reverse-mode differentiation tape for one forward pass.
///
/// Nodes are appended in execution order, so the arena is already
/// topologically sorted and `backward` simply walks it in reverse.
#[derive(Default)]
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    visits: Vec<u32>,
    backward_done: bool,
    scope: String,
    op_counts: BTreeMap<(String, OpKind), usize>,
    events: BTreeMap<String, usize>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Leaf that accumulates a gradient during `backward`.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        self.grads.push(None);
        self.visits.push(0);
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        let kind = op.kind();
        if !value.all_finite() {
            return Err(Error::NonFinite { op: kind.name() });
        }
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        *self.op_counts.entry((self.scope.clone(), kind)).or_default() += 1;
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        self.visits.push(0);
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` loss with respect to a leaf.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        self.grads[v.0]
            .as_ref()
            .map(|g| Tensor::from_parts(self.nodes[v.0].value.shape().to_vec(), g.clone()))
    }

    /// Tags subsequently recorded ops with an instrumentation scope.
    pub fn set_scope(&mut self, scope: &str) {
        self.scope.clear();
        self.scope.push_str(scope);
    }

    pub fn scope(&self) -> &str {
        &self.scope
    }

    /// Records a named event (e.g. a composite block invocation).
    pub fn mark(&mut self, event: &str) {
        *self.events.entry(event.to_string()).or_default() += 1;
    }

    pub fn event_count(&self, event: &str) -> usize {
        self.events.get(event).copied().unwrap_or(0)
    }

    /// Number of recorded ops of `kind` whose scope starts with `scope_prefix`.
    pub fn op_count(&self, scope_prefix: &str, kind: OpKind) -> usize {
        self.op_counts
            .iter()
            .filter(|((s, k), _)| *k == kind && s.starts_with(scope_prefix))
            .map(|(_, n)| n)
            .sum()
    }

    /// Per-node visit counts of the most recent backward pass.
    pub fn backward_visits(&self) -> &[u32] {
        &self.visits
    }

    /// Clears all gradients so `backward` may run again.
    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
        self.visits.iter_mut().for_each(|v| *v = 0);
        self.backward_done = false;
    }

    /// Propagates d(loss)/d(node) to every reachable node that requires a
    /// gradient. Intermediate gradients are released once consumed; leaf
    /// gradients are retained for [`Graph::grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Backward("gradients already populated; call zero_grad first"));
        }
        let node = &self.nodes[loss.0];
        if !node.value.is_scalar() {
            return Err(Error::Backward("loss must be a scalar"));
        }
        if !node.requires_grad {
            return Err(Error::Backward("loss is detached from every differentiable leaf"));
        }
        self.backward_done = true;
        self.grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let grad_out = match &node.op {
                Op::Leaf => {
                    if self.grads[id].is_some() {
                        self.visits[id] += 1;
                    }
                    continue;
                }
                _ => match self.grads[id].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            self.visits[id] += 1;
            for (input, g) in self.backward_op(id, &grad_out) {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut self.grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }
}
