//! Named trainable parameters and the per-forward binding to tape leaves.

use super::tape::{Gradients, Tape, TensorId};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A trainable tensor with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    /// Whether weight decay applies (false for BN scale/shift and biases).
    pub decay: bool,
}

/// Stable index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

/// Flat, insertion-ordered collection of model parameters.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    has_grads: bool,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, decay: bool) -> ParamId {
        let name = name.into();
        debug_assert!(
            self.params.iter().all(|p| p.name != name),
            "duplicate parameter name {name}"
        );
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter {
            name,
            value,
            grad,
            decay,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Total scalar count across all parameters.
    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.iter_mut() {
            p.grad = Tensor::zeros(p.value.shape());
        }
        self.has_grads = false;
    }

    pub fn has_grads(&self) -> bool {
        self.has_grads
    }

    pub(crate) fn mark_grads(&mut self) {
        self.has_grads = true;
    }
}

/// One forward/backward pass: a tape plus the parameter-to-leaf bindings.
pub struct Session {
    pub tape: Tape,
    bindings: Vec<(ParamId, TensorId)>,
}

impl Session {
    pub fn new() -> Self {
        Session {
            tape: Tape::new(),
            bindings: Vec::new(),
        }
    }

    /// Bind a parameter as a trainable leaf (once per session).
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> TensorId {
        if let Some(&(_, tid)) = self.bindings.iter().find(|(pid, _)| *pid == id) {
            return tid;
        }
        let tid = self.tape.leaf(store.get(id).value.clone());
        self.bindings.push((id, tid));
        tid
    }

    pub fn constant(&mut self, value: Tensor) -> TensorId {
        self.tape.constant(value)
    }

    /// Run the reverse sweep and accumulate gradients into the store.
    pub fn backward(mut self, loss: TensorId, store: &mut ParamStore) -> Result<()> {
        let mut grads: Gradients = self.tape.backward(loss)?;
        for (pid, tid) in self.bindings {
            if let Some(g) = grads.take(tid) {
                store.get_mut(pid).grad.add_assign(&g);
            }
        }
        store.mark_grads();
        Ok(())
    }

    /// Gradients keyed by tape id, for callers that bind leaves manually.
    pub fn backward_raw(mut self, loss: TensorId) -> Result<Gradients> {
        self.tape.backward(loss)
    }
}

impl Default for Session {
    fn default() -> Self {
        Self::new()
    }
}

/// Running batch-norm statistics; owned by each normalization layer.
#[derive(Debug, Clone)]
pub struct BnState {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub initialized: bool,
}

impl BnState {
    pub fn new(channels: usize) -> Self {
        BnState {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            initialized: false,
        }
    }

    pub fn update(&mut self, batch_mean: &[f64], batch_var: &[f64], momentum: f64) {
        for (r, &b) in self.mean.iter_mut().zip(batch_mean) {
            *r = (1.0 - momentum) * *r + momentum * b;
        }
        for (r, &b) in self.var.iter_mut().zip(batch_var) {
            *r = (1.0 - momentum) * *r + momentum * b;
        }
        self.initialized = true;
    }
}

/// Batch normalization layer: scale/shift parameters plus running state.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub name: String,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub state: BnState,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Tensor::filled(&[channels], 1.0), false);
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(&[channels]), false);
        BatchNorm {
            name: name.to_string(),
            gamma,
            beta,
            state: BnState::new(channels),
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    /// Forward in training or eval mode. Training mode uses batch statistics
    /// and updates the running state; eval mode requires initialized state.
    pub fn forward(
        &mut self,
        sess: &mut Session,
        store: &ParamStore,
        x: TensorId,
        training: bool,
    ) -> Result<TensorId> {
        let (mean, inv_std) = if training {
            let (mean, var) = super::kernels::bn_batch_stats(sess.tape.value(x));
            self.state.update(&mean, &var, self.momentum);
            let inv_std = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
            (mean, inv_std)
        } else {
            if !self.state.initialized {
                return Err(Error::State(format!(
                    "batch norm '{}' evaluated before any training step or checkpoint load",
                    self.name
                )));
            }
            let inv_std = self
                .state
                .var
                .iter()
                .map(|v| 1.0 / (v + self.eps).sqrt())
                .collect();
            (self.state.mean.clone(), inv_std)
        };
        let gamma = sess.param(store, self.gamma);
        let beta = sess.param(store, self.beta);
        sess.tape.batchnorm(x, gamma, beta, mean, inv_std, training)
    }
}
