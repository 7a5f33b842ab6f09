//! Stochastic gradient descent with momentum and decoupled-by-flag weight
//! decay (normalization scales/shifts and biases are exempt).

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct SgdMomentum {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Tensor>,
}

impl SgdMomentum {
    pub fn new(store: &ParamStore, momentum: f64, weight_decay: f64) -> Self {
        let velocity = store.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        SgdMomentum {
            momentum,
            weight_decay,
            velocity,
        }
    }

    /// `v <- momentum*v + grad + wd*value; value <- value - lr*v`.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64) -> Result<()> {
        if !store.has_grads() {
            return Err(Error::State(
                "optimizer step before any backward pass populated gradients".into(),
            ));
        }
        for (p, v) in store.iter_mut().zip(self.velocity.iter_mut()) {
            let wd = if p.decay { self.weight_decay } else { 0.0 };
            for ((vv, &g), x) in v
                .data_mut()
                .iter_mut()
                .zip(p.grad.data())
                .zip(p.value.data_mut())
            {
                *vv = self.momentum * *vv + g + wd * *x;
                *x -= lr * *vv;
            }
        }
        Ok(())
    }

    /// Named momentum buffers for checkpointing.
    pub fn momenta(&self, store: &ParamStore) -> Vec<(String, Tensor)> {
        store
            .iter()
            .zip(&self.velocity)
            .map(|(p, v)| (p.name.clone(), v.clone()))
            .collect()
    }

    pub fn restore_momenta(
        &mut self,
        store: &ParamStore,
        lookup: impl Fn(&str) -> Option<Tensor>,
    ) -> Result<()> {
        for (i, p) in store.iter().enumerate() {
            let v = lookup(&p.name).ok_or_else(|| {
                Error::Format(format!("checkpoint is missing momentum for {}", p.name))
            })?;
            if v.shape() != p.value.shape() {
                return Err(Error::Format(format!(
                    "momentum for {} has shape {:?}, expected {:?}",
                    p.name,
                    v.shape(),
                    p.value.shape()
                )));
            }
            self.velocity[i] = v;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(value: f64, grad: f64, decay: bool) -> (ParamStore, crate::autodiff::ParamId) {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::scalar(value), decay);
        store.get_mut(id).grad = Tensor::scalar(grad);
        store.mark_grads();
        (store, id)
    }

    #[test]
    fn plain_descent_when_momentum_and_decay_are_zero() {
        let (mut store, id) = store_with(1.0, 0.5, true);
        let mut opt = SgdMomentum::new(&store, 0.0, 0.0);
        opt.step(&mut store, 0.1).unwrap();
        assert!((store.get(id).value.data()[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn zero_grad_with_decay_shrinks_toward_zero() {
        let (mut store, id) = store_with(2.0, 0.0, true);
        let mut opt = SgdMomentum::new(&store, 0.0, 0.1);
        opt.step(&mut store, 1.0).unwrap();
        assert!((store.get(id).value.data()[0] - 1.8).abs() < 1e-15);
    }

    #[test]
    fn decay_exempt_parameter_is_untouched_by_wd() {
        let (mut store, id) = store_with(2.0, 0.0, false);
        let mut opt = SgdMomentum::new(&store, 0.0, 0.1);
        opt.step(&mut store, 1.0).unwrap();
        assert_eq!(store.get(id).value.data()[0], 2.0);
    }

    #[test]
    fn two_steps_match_hand_unrolled_recursion() {
        // Quadratic loss L = 0.5*w^2, grad = w; lr=0.1, momentum=0.9, wd=0.
        let (mut store, id) = store_with(1.0, 1.0, true);
        let mut opt = SgdMomentum::new(&store, 0.9, 0.0);
        opt.step(&mut store, 0.1).unwrap();
        // v1 = 1; w1 = 1 - 0.1 = 0.9
        assert!((store.get(id).value.data()[0] - 0.9).abs() < 1e-15);
        store.zero_grads();
        store.get_mut(id).grad = Tensor::scalar(0.9);
        store.mark_grads();
        opt.step(&mut store, 0.1).unwrap();
        // v2 = 0.9*1 + 0.9 = 1.8; w2 = 0.9 - 0.18 = 0.72
        assert!((store.get(id).value.data()[0] - 0.72).abs() < 1e-15);
    }

    #[test]
    fn zero_lr_leaves_values_bitwise_unchanged() {
        let (mut store, id) = store_with(std::f64::consts::PI, 3.3, true);
        let before = store.get(id).value.data()[0].to_bits();
        let mut opt = SgdMomentum::new(&store, 0.9, 0.01);
        opt.step(&mut store, 0.0).unwrap();
        assert_eq!(store.get(id).value.data()[0].to_bits(), before);
    }

    #[test]
    fn step_before_backward_errors() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::scalar(1.0), true);
        let mut opt = SgdMomentum::new(&store, 0.9, 0.0);
        assert!(matches!(opt.step(&mut store, 0.1), Err(Error::State(_))));
    }
}
