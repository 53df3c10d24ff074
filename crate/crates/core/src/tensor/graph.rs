use super::conv::{self, ConvSpec};
use super::{elementwise, linear, pool, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        spec: ConvSpec,
        /// Per-sample im2col buffers, `[H'W', C·kh·kw]` each.
        cols: Vec<Vec<f32>>,
    },
    MaxPool2d {
        input: Var,
        /// Flat input index that won each output cell.
        argmax: Vec<u32>,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    Relu {
        input: Var,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Reshape {
        input: Var,
    },
    Sum {
        input: Var,
    },
    Scale {
        input: Var,
        factor: f32,
    },
    Add {
        lhs: Var,
        rhs: Var,
    },
    /// Σ input ⊙ weights with constant weights.
    Dot {
        input: Var,
        weights: Vec<f32>,
    },
    EuclideanLoss {
        pred: Var,
        target: Var,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records a forward computation for reverse-mode differentiation.
///
/// Leaves flagged `requires_grad` receive accumulated gradients in their
/// tensor's `grad` buffer each time [`Graph::backward`] runs.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
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

    /// Adds an input tensor. Gradients flow to it iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let needs_grad = t.requires_grad();
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Adds a tensor that never receives gradients.
    pub fn constant(&mut self, mut t: Tensor) -> Var {
        t.set_requires_grad(false);
        self.leaf(t)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn dims(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.dims()
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.nodes[v.0].value.grad()
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        std::mem::replace(&mut self.nodes[v.0].value, Tensor::scalar(0.0))
    }

    pub(crate) fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op) -> Var {
        let needs_grad = match &op {
            Op::Leaf => false,
            Op::Conv2d {
                input,
                weight,
                bias,
                ..
            } => self.needs_grad(*input) || self.needs_grad(*weight) || self.needs_grad(*bias),
            Op::MaxPool2d { input, .. }
            | Op::Relu { input }
            | Op::Reshape { input }
            | Op::Sum { input }
            | Op::Scale { input, .. }
            | Op::Dot { input, .. } => self.needs_grad(*input),
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                self.needs_grad(*input)
                    || self.needs_grad(*weight)
                    || bias.map_or(false, |b| self.needs_grad(b))
            }
            Op::Concat { parts, .. } => parts.iter().any(|p| self.needs_grad(*p)),
            Op::Add { lhs, rhs } => self.needs_grad(*lhs) || self.needs_grad(*rhs),
            Op::EuclideanLoss { pred, target } => {
                self.needs_grad(*pred) || self.needs_grad(*target)
            }
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Propagates d(loss)/d(node) back to every `requires_grad` leaf,
    /// adding into the leaf tensors' gradient buffers.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got dims {:?}",
                self.nodes[loss.0].value.dims()
            )));
        }
        let mut grads: Vec<Option<Vec<f32>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].needs_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[idx].op {
                self.nodes[idx].value.accumulate_grad(&g);
                continue;
            }
            let contributions = self.vjp(idx, &g);
            for (var, delta) in contributions {
                if !self.nodes[var.0].needs_grad {
                    continue;
                }
                match &mut grads[var.0] {
                    Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, d)| *a += d),
                    slot @ None => *slot = Some(delta),
                }
            }
        }
        Ok(())
    }

    /// Vector-Jacobian products of node `idx` for each parent needing a gradient.
    fn vjp(&self, idx: usize, g: &[f32]) -> Vec<(Var, Vec<f32>)> {
        let node = &self.nodes[idx];
        let want = |v: Var| self.nodes[v.0].needs_grad;
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Conv2d {
                input,
                weight,
                bias,
                spec,
                cols,
            } => conv::backward(
                self.value(*input),
                self.value(*weight),
                &node.value,
                spec,
                cols,
                g,
                [want(*input), want(*weight), want(*bias)],
            )
            .into_iter()
            .zip([*input, *weight, *bias])
            .filter_map(|(d, v)| d.map(|d| (v, d)))
            .collect(),
            Op::MaxPool2d { input, argmax } => {
                vec![(*input, pool::backward(self.value(*input).numel(), argmax, g))]
            }
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let [din, dw, db] = linear::backward(
                    self.value(*input),
                    self.value(*weight),
                    g,
                    [want(*input), want(*weight), bias.map_or(false, want)],
                );
                let mut out = Vec::new();
                if let Some(d) = din {
                    out.push((*input, d));
                }
                if let Some(d) = dw {
                    out.push((*weight, d));
                }
                if let (Some(b), Some(d)) = (bias, db) {
                    out.push((*b, d));
                }
                out
            }
            Op::Relu { input } => vec![(*input, elementwise::relu_backward(&node.value, g))],
            Op::Concat { parts, axis } => {
                let dims: Vec<&[usize]> = parts.iter().map(|p| self.dims(*p)).collect();
                elementwise::concat_backward(&dims, *axis, g)
                    .into_iter()
                    .zip(parts.iter().copied())
                    .map(|(d, v)| (v, d))
                    .collect()
            }
            Op::Reshape { input } => vec![(*input, g.to_vec())],
            Op::Sum { input } => vec![(*input, vec![g[0]; self.value(*input).numel()])],
            Op::Scale { input, factor } => {
                vec![(*input, g.iter().map(|v| v * factor).collect())]
            }
            Op::Add { lhs, rhs } => vec![(*lhs, g.to_vec()), (*rhs, g.to_vec())],
            Op::Dot { input: x, weights } => {
                vec![(*x, weights.iter().map(|w| w * g[0]).collect())]
            }
            Op::EuclideanLoss { pred, target } => {
                let (dp, dt) = elementwise::euclidean_backward(
                    self.value(*pred),
                    self.value(*target),
                    g[0],
                );
                vec![(*pred, dp), (*target, dt)]
            }
        }
    }
}
