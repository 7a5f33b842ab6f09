//! Reverse-mode differentiation on an operation tape.
//!
//! Every forward op appends a node holding its output value, parent ids and
//! whatever the adjoint needs. `backward` replays nodes in exact reverse
//! execution order and accumulates gradients into leaf slots.

use super::kernels::{self, BnSaved, ContractKind};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(pub(crate) usize);

/// Deliberate adjoint corruption; verification hook for the gradient
/// checker's negative control. Never used by production paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Corruption {
    /// Multiply the tanh adjoint by 1.5.
    TanhAdjoint,
    /// Multiply every channel-mix weight adjoint by 1.5.
    Conv1x1Weights,
}

enum Step {
    Leaf,
    Conv1x1,
    TemporalConv {
        stride: usize,
        dilation: usize,
    },
    BatchNorm {
        saved: BnSaved,
    },
    Tanh,
    Relu,
    SoftmaxLast,
    Scale(f64),
    Add,
    Mul,
    AddBroadcast,
    MulScalarParam,
    MeanAxes {
        axes: Vec<usize>,
    },
    MaxPoolTemporal {
        arg: Vec<u32>,
    },
    ConcatChannels {
        part_channels: Vec<usize>,
    },
    Permute {
        perm: Vec<usize>,
    },
    Reshape,
    Contract(ContractKind),
    PairwiseDiff,
    LabelSmoothCe {
        targets: Vec<usize>,
        epsilon: f64,
        softmax: Tensor,
    },
}

struct Node {
    value: Tensor,
    parents: Vec<TensorId>,
    step: Step,
    needs_grad: bool,
}

/// Ordered record of executed operations with saved inputs for the adjoints.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    spent: bool,
    corruption: Option<Corruption>,
}

/// Per-node gradients produced by [`Tape::backward`]. Only leaves that can
/// reach the loss keep a slot.
pub struct Gradients {
    slots: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: TensorId) -> Option<&Tensor> {
        self.slots.get(id.0).and_then(|s| s.as_ref())
    }

    pub fn take(&mut self, id: TensorId) -> Option<Tensor> {
        self.slots.get_mut(id.0).and_then(|s| s.take())
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn set_corruption(&mut self, corruption: Option<Corruption>) {
        self.corruption = corruption;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    fn check_live(&self) -> Result<()> {
        if self.spent {
            return Err(Error::State(
                "tape already consumed by backward; run a new forward pass".into(),
            ));
        }
        Ok(())
    }

    fn push(&mut self, value: Tensor, parents: Vec<TensorId>, step: Step) -> TensorId {
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node {
            value,
            parents,
            step,
            needs_grad,
        });
        TensorId(self.nodes.len() - 1)
    }

    /// Trainable leaf: gradients are tracked through it.
    pub fn leaf(&mut self, value: Tensor) -> TensorId {
        self.nodes.push(Node {
            value,
            parents: vec![],
            step: Step::Leaf,
            needs_grad: true,
        });
        TensorId(self.nodes.len() - 1)
    }

    /// Constant leaf: no gradient is ever materialized for it.
    pub fn constant(&mut self, value: Tensor) -> TensorId {
        self.nodes.push(Node {
            value,
            parents: vec![],
            step: Step::Leaf,
            needs_grad: false,
        });
        TensorId(self.nodes.len() - 1)
    }

    pub fn conv1x1(
        &mut self,
        x: TensorId,
        w: TensorId,
        bias: Option<TensorId>,
    ) -> Result<TensorId> {
        self.check_live()?;
        let out = kernels::conv1x1(
            self.value(x),
            self.value(w),
            bias.map(|b| self.value(b)),
        )?;
        let mut parents = vec![x, w];
        if let Some(b) = bias {
            parents.push(b);
        }
        Ok(self.push(out, parents, Step::Conv1x1))
    }

    pub fn temporal_conv(
        &mut self,
        x: TensorId,
        w: TensorId,
        bias: Option<TensorId>,
        stride: usize,
        dilation: usize,
    ) -> Result<TensorId> {
        self.check_live()?;
        let out = kernels::temporal_conv(
            self.value(x),
            self.value(w),
            bias.map(|b| self.value(b)),
            stride,
            dilation,
        )?;
        let mut parents = vec![x, w];
        if let Some(b) = bias {
            parents.push(b);
        }
        Ok(self.push(out, parents, Step::TemporalConv { stride, dilation }))
    }

    /// Normalize with the supplied statistics (the layer decides whether
    /// they are batch or running statistics; `training` selects the adjoint).
    pub fn batchnorm(
        &mut self,
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        mean: Vec<f64>,
        inv_std: Vec<f64>,
        training: bool,
    ) -> Result<TensorId> {
        self.check_live()?;
        let out = kernels::batchnorm_forward(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            &mean,
            &inv_std,
        )?;
        let saved = BnSaved {
            mean,
            inv_std,
            training,
        };
        Ok(self.push(out, vec![x, gamma, beta], Step::BatchNorm { saved }))
    }

    pub fn tanh(&mut self, x: TensorId) -> Result<TensorId> {
        self.check_live()?;
        let out = kernels::tanh(self.value(x));
        Ok(self.push(out, vec![x], Step::Tanh))
    }

    pub fn relu(&mut self, x: TensorId) -> Result<TensorId> {
        self.check_live()?;
        let out = kernels::relu(self.value(x));
        Ok(self.push(out, vec![x], Step::Relu))
    }

    pub fn softmax_lastdim(&mut self, x: TensorId) -> Result<TensorId> {
        self.check_live()?;
        let out = kernels::softmax_lastdim(self.value(x))?;
        Ok(self.push(out, vec![x], Step::SoftmaxLast))
    }

    pub fn scale(&mut self, x: TensorId, factor: f64) -> Result<TensorId> {
        self.check_live()?;
        let out = kernels::scale(self.value(x), factor);
        Ok(self.push(out, vec![x], Step::Scale(factor)))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.check_live()?;
        let out = kernels::add(self.value(a), self.value(b))?;
        Ok(self.push(out, vec![a, b], Step::Add))
    }

    /// Elementwise product of same-shape values.
    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.check_live()?;
        let out = kernels::mul(self.value(a), self.value(b))?;
        Ok(self.push(out, vec![a, b], Step::Mul))
    }

    /// `a + b` with `b.shape` a suffix of `a.shape`.
    pub fn add_broadcast(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.check_live()?;
        let out = kernels::add_broadcast(self.value(a), self.value(b))?;
        Ok(self.push(out, vec![a, b], Step::AddBroadcast))
    }

    /// Multiply by a learnable one-element gate.
    pub fn mul_scalar_param(&mut self, x: TensorId, s: TensorId) -> Result<TensorId> {
        self.check_live()?;
        let out = kernels::mul_scalar_param(self.value(x), self.value(s))?;
        Ok(self.push(out, vec![x, s], Step::MulScalarParam))
    }

    pub fn mean_axes(&mut self, x: TensorId, axes: &[usize]) -> Result<TensorId> {
        self.check_live()?;
        let out = kernels::mean_axes(self.value(x), axes)?;
        Ok(self.push(out, vec![x], Step::MeanAxes { axes: axes.to_vec() }))
    }

    pub fn max_pool_temporal(&mut self, x: TensorId, k: usize, stride: usize) -> Result<TensorId> {
        self.check_live()?;
        let (out, arg) = kernels::max_pool_temporal(self.value(x), k, stride)?;
        Ok(self.push(out, vec![x], Step::MaxPoolTemporal { arg }))
    }

    pub fn concat_channels(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        self.check_live()?;
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let out = kernels::concat_channels(&tensors)?;
        let part_channels = parts.iter().map(|&p| self.shape(p)[1]).collect();
        Ok(self.push(
            out,
            parts.to_vec(),
            Step::ConcatChannels { part_channels },
        ))
    }

    pub fn permute(&mut self, x: TensorId, perm: &[usize]) -> Result<TensorId> {
        self.check_live()?;
        let out = kernels::permute(self.value(x), perm)?;
        Ok(self.push(out, vec![x], Step::Permute { perm: perm.to_vec() }))
    }

    pub fn reshape(&mut self, x: TensorId, shape: &[usize]) -> Result<TensorId> {
        self.check_live()?;
        let out = self.value(x).reshape(shape)?;
        Ok(self.push(out, vec![x], Step::Reshape))
    }

    pub fn contract(&mut self, kind: ContractKind, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.check_live()?;
        let out = kernels::contract(kind, self.value(a), self.value(b))?;
        Ok(self.push(out, vec![a, b], Step::Contract(kind)))
    }

    pub fn pairwise_diff(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.check_live()?;
        let out = kernels::pairwise_diff(self.value(a), self.value(b))?;
        Ok(self.push(out, vec![a, b], Step::PairwiseDiff))
    }

    pub fn label_smoothing_ce(
        &mut self,
        logits: TensorId,
        targets: &[usize],
        epsilon: f64,
    ) -> Result<TensorId> {
        self.check_live()?;
        let (loss, softmax) = kernels::label_smoothing_ce(self.value(logits), targets, epsilon)?;
        Ok(self.push(
            Tensor::scalar(loss),
            vec![logits],
            Step::LabelSmoothCe {
                targets: targets.to_vec(),
                epsilon,
                softmax,
            },
        ))
    }

    /// Reverse sweep from a scalar loss. Consumes the recorded graph: the
    /// tape is cleared afterwards and a second call errors.
    pub fn backward(&mut self, loss: TensorId) -> Result<Gradients> {
        self.check_live()?;
        let loss_node = &self.nodes[loss.0];
        if loss_node.value.numel() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_node.value.shape()
            )));
        }
        let loss_value = loss_node.value.data()[0];
        if !loss_value.is_finite() {
            return Err(Error::NonFinite(format!("loss is {loss_value}")));
        }

        let mut slots: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].needs_grad {
            slots[loss.0] = Some(Tensor::scalar(1.0));
        }

        for idx in (0..=loss.0).rev() {
            if matches!(self.nodes[idx].step, Step::Leaf) {
                continue; // leaf slots are the result; keep them
            }
            let Some(grad) = slots[idx].take() else {
                continue;
            };
            let wants: Vec<bool> = self.nodes[idx]
                .parents
                .iter()
                .map(|p| self.nodes[p.0].needs_grad)
                .collect();
            let parent_grads = self.step_backward(idx, &grad, &wants);
            let parents = self.nodes[idx].parents.clone();
            for (pid, pg) in parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                match &mut slots[pid.0] {
                    Some(existing) => existing.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
        }

        self.nodes.clear();
        self.spent = true;
        Ok(Gradients { slots })
    }

    /// Adjoint of one node; returns gradients aligned with its parents.
    fn step_backward(&self, idx: usize, grad: &Tensor, wants: &[bool]) -> Vec<Option<Tensor>> {
        let node = &self.nodes[idx];
        let val = |p: usize| &self.nodes[node.parents[p].0].value;
        match &node.step {
            Step::Leaf => vec![],
            Step::Conv1x1 => {
                let has_bias = node.parents.len() == 3;
                let (gx, mut gw, gb) = kernels::conv1x1_backward(
                    val(0),
                    val(1),
                    has_bias,
                    grad,
                    wants[0],
                    wants[1],
                );
                if self.corruption == Some(Corruption::Conv1x1Weights) {
                    if let Some(gw) = gw.as_mut() {
                        gw.scale_assign(1.5);
                    }
                }
                let mut out = vec![gx, gw];
                if has_bias {
                    out.push(gb);
                }
                out
            }
            Step::TemporalConv { stride, dilation } => {
                let has_bias = node.parents.len() == 3;
                let (gx, gw, gb) = kernels::temporal_conv_backward(
                    val(0),
                    val(1),
                    has_bias,
                    *stride,
                    *dilation,
                    grad,
                    wants[0],
                    wants[1],
                );
                let mut out = vec![gx, gw];
                if has_bias {
                    out.push(gb);
                }
                out
            }
            Step::BatchNorm { saved } => {
                let (gx, gg, gb) = kernels::batchnorm_backward(
                    val(0),
                    val(1),
                    saved,
                    grad,
                    wants[0],
                    wants[1] || wants[2],
                );
                vec![gx, gg, gb]
            }
            Step::Tanh => {
                let mut gx = kernels::tanh_backward(&node.value, grad);
                if self.corruption == Some(Corruption::TanhAdjoint) {
                    gx.scale_assign(1.5);
                }
                vec![Some(gx)]
            }
            Step::Relu => vec![Some(kernels::relu_backward(val(0), grad))],
            Step::SoftmaxLast => vec![Some(kernels::softmax_backward(&node.value, grad))],
            Step::Scale(factor) => vec![Some(kernels::scale(grad, *factor))],
            Step::Add => {
                let mk = |w: bool| w.then(|| grad.clone());
                vec![mk(wants[0]), mk(wants[1])]
            }
            Step::Mul => {
                let ga = wants[0].then(|| kernels::mul(grad, val(1)).expect("mul adjoint"));
                let gb = wants[1].then(|| kernels::mul(grad, val(0)).expect("mul adjoint"));
                vec![ga, gb]
            }
            Step::AddBroadcast => {
                let ga = wants[0].then(|| grad.clone());
                let gb = wants[1]
                    .then(|| kernels::add_broadcast_backward_b(val(1).shape(), grad));
                vec![ga, gb]
            }
            Step::MulScalarParam => {
                let s = val(1).data()[0];
                let gx = wants[0].then(|| kernels::scale(grad, s));
                let gs = wants[1].then(|| {
                    let dot: f64 = grad
                        .data()
                        .iter()
                        .zip(val(0).data())
                        .map(|(g, x)| g * x)
                        .sum();
                    Tensor::from_vec(&[1], vec![dot]).unwrap()
                });
                vec![gx, gs]
            }
            Step::MeanAxes { axes } => {
                vec![Some(kernels::mean_axes_backward(val(0).shape(), axes, grad))]
            }
            Step::MaxPoolTemporal { arg } => {
                vec![Some(kernels::max_pool_temporal_backward(
                    val(0).shape(),
                    arg,
                    grad,
                ))]
            }
            Step::ConcatChannels { part_channels } => {
                kernels::concat_channels_backward(part_channels, grad)
                    .into_iter()
                    .map(Some)
                    .collect()
            }
            Step::Permute { perm } => {
                let inv = kernels::invert_permutation(perm);
                vec![Some(kernels::permute(grad, &inv).expect("inverse permute"))]
            }
            Step::Reshape => {
                vec![Some(grad.reshape(val(0).shape()).expect("reshape adjoint"))]
            }
            Step::Contract(kind) => {
                let (ga, gb) =
                    kernels::contract_backward(*kind, val(0), val(1), grad, wants[0], wants[1]);
                vec![ga, gb]
            }
            Step::PairwiseDiff => {
                let (ga, gb) =
                    kernels::pairwise_diff_backward(val(0).shape(), grad, wants[0], wants[1]);
                vec![ga, gb]
            }
            Step::LabelSmoothCe {
                targets,
                epsilon,
                softmax,
            } => {
                let upstream = grad.data()[0];
                vec![Some(kernels::label_smoothing_ce_backward(
                    softmax, targets, *epsilon, upstream,
                ))]
            }
        }
    }
}
