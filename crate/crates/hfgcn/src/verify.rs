//! Gradient-integrity drivers: finite-difference checks for the attention
//! module, the hypergraph convolution unit, the temporal module, and the
//! composed network at a tiny configuration.

use crate::autodiff::{kernels, Corruption, ParamStore, Session};
use crate::error::{Error, Result};
use crate::gradcheck::{finite_diff_check, GradCheckOptions, GradCheckReport};
use crate::layout::SkeletonLayout;
use crate::model::{HamMode, Model, ModelConfig, XiInput};
use crate::tensor::Tensor;
use crate::topology::{apply_hypergraphs, build_adjacency, HypergraphSet};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt;
use std::str::FromStr;

/// Which piece to check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckTarget {
    Ham,
    Hgcm,
    Mstc,
    Model,
}

impl CheckTarget {
    pub const ALL: [CheckTarget; 4] = [
        CheckTarget::Ham,
        CheckTarget::Hgcm,
        CheckTarget::Mstc,
        CheckTarget::Model,
    ];
}

impl fmt::Display for CheckTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CheckTarget::Ham => "ham",
            CheckTarget::Hgcm => "hgcm",
            CheckTarget::Mstc => "mstc",
            CheckTarget::Model => "model",
        };
        write!(f, "{s}")
    }
}

impl FromStr for CheckTarget {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "ham" => Ok(CheckTarget::Ham),
            "hgcm" => Ok(CheckTarget::Hgcm),
            "mstc" => Ok(CheckTarget::Mstc),
            "model" => Ok(CheckTarget::Model),
            other => Err(Error::Config(format!(
                "unknown module '{other}' (expected ham|hgcm|mstc|model)"
            ))),
        }
    }
}

/// Tiny shapes used by all module checks: B=2, C=8, T=8, V=25.
const B: usize = 2;
const C: usize = 8;
const T: usize = 8;
const V: usize = 25;

fn tiny_layout() -> SkeletonLayout {
    SkeletonLayout::ntu25()
}

/// Random-projection scalar loss: mean(R .* out), with R a fixed random
/// constant so every output coordinate contributes a distinct adjoint.
fn projected_loss(
    sess: &mut Session,
    out: crate::autodiff::TensorId,
    projection: &Tensor,
) -> Result<crate::autodiff::TensorId> {
    let r = sess.constant(projection.clone());
    let weighted = sess.tape.mul(out, r)?;
    let rank = sess.tape.shape(weighted).len();
    let axes: Vec<usize> = (0..rank).collect();
    sess.tape.mean_axes(weighted, &axes)
}

/// Run a finite-difference check for one module. Returns the report; when
/// `corrupt` is set, the analytic side is deliberately damaged so the check
/// must fail (negative control).
pub fn gradcheck_target(
    target: CheckTarget,
    seed: u64,
    opts: &GradCheckOptions,
    corrupt: bool,
) -> Result<GradCheckReport> {
    let corruption = corrupt.then_some(Corruption::Conv1x1Weights);
    match target {
        CheckTarget::Ham => {
            let layout = tiny_layout();
            let set = HypergraphSet::from_layout(&layout, &crate::layout::HypergraphName::ALL)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut store = ParamStore::new();
            let ham = crate::model::HyperAttention::new(
                &mut store,
                &mut rng,
                "ham",
                C,
                C / 4,
                set.len(),
                HamMode::PerBranch,
            );
            let x = Tensor::uniform(&[B, C, T, V], 1.0, &mut rng);
            let hx = apply_hypergraphs(&x, &set)?;
            let projection = Tensor::uniform(&[B, T, V, V], 1.0, &mut rng);

            let mut run = |s: &ParamStore,
                           grads: Option<&mut ParamStore>|
             -> Result<f64> {
                let mut sess = Session::new();
                sess.tape.set_corruption(if grads.is_some() { corruption } else { None });
                let xid = sess.constant(x.clone());
                let hx_ids: Vec<_> = hx.iter().map(|h| sess.constant(h.clone())).collect();
                let maps = ham.forward(&mut sess, s, xid, &hx_ids)?;
                let mut total = None;
                for &m in &maps {
                    let l = projected_loss(&mut sess, m, &projection)?;
                    total = Some(match total {
                        None => l,
                        Some(acc) => sess.tape.add(acc, l)?,
                    });
                }
                let loss_id = total.unwrap();
                let loss = sess.tape.value(loss_id).data()[0];
                if let Some(gstore) = grads {
                    sess.backward(loss_id, gstore)?;
                }
                Ok(loss)
            };
            drive(&mut store, opts, &mut run)
        }
        CheckTarget::Hgcm => {
            let layout = tiny_layout();
            let set = HypergraphSet::from_layout(&layout, &crate::layout::HypergraphName::ALL)?;
            let adjacency = build_adjacency(&layout.bones, V)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut store = ParamStore::new();
            let unit = crate::model::HgcmUnit::new(
                &mut store,
                &mut rng,
                "unit",
                C,
                C,
                C / 4,
                1.0 / 3.0,
                XiInput::Hypergraph,
            );
            let x = Tensor::uniform(&[B, C, T, V], 1.0, &mut rng);
            let hx = apply_hypergraphs(&x, &set)?;
            // Fixed, properly normalized attention map.
            let ha = kernels::softmax_lastdim(&Tensor::uniform(&[B, T, V, V], 1.0, &mut rng))?;
            let projection = Tensor::uniform(&[B, C, T, V], 1.0, &mut rng);

            let mut run = |s: &ParamStore,
                           grads: Option<&mut ParamStore>|
             -> Result<f64> {
                let mut sess = Session::new();
                sess.tape.set_corruption(if grads.is_some() { corruption } else { None });
                let xid = sess.constant(x.clone());
                let hxid = sess.constant(hx[0].clone());
                let haid = sess.constant(ha.clone());
                let aid = sess.constant(adjacency.matrix().clone());
                let out = unit.forward(&mut sess, s, xid, hxid, haid, aid)?;
                let loss_id = projected_loss(&mut sess, out, &projection)?;
                let loss = sess.tape.value(loss_id).data()[0];
                if let Some(gstore) = grads {
                    sess.backward(loss_id, gstore)?;
                }
                Ok(loss)
            };
            drive(&mut store, opts, &mut run)
        }
        CheckTarget::Mstc => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut store = ParamStore::new();
            let mut mstc = crate::model::MultiScaleTemporalConv::new(
                &mut store,
                &mut rng,
                "mstc",
                C,
                2,
                &crate::model::standard_branches(),
            )?;
            let x = Tensor::uniform(&[B, C, T, V], 1.0, &mut rng);
            let projection = Tensor::uniform(&[B, C, T.div_ceil(2), V], 1.0, &mut rng);

            let mut run = |s: &ParamStore,
                           grads: Option<&mut ParamStore>|
             -> Result<f64> {
                let mut sess = Session::new();
                sess.tape.set_corruption(if grads.is_some() { corruption } else { None });
                let xid = sess.constant(x.clone());
                let out = mstc.forward(&mut sess, s, xid, true)?;
                let loss_id = projected_loss(&mut sess, out, &projection)?;
                let loss = sess.tape.value(loss_id).data()[0];
                if let Some(gstore) = grads {
                    sess.backward(loss_id, gstore)?;
                }
                Ok(loss)
            };
            drive(&mut store, opts, &mut run)
        }
        CheckTarget::Model => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut model = Model::new(ModelConfig::tiny(), seed)?;
            let x = Tensor::uniform(&[B, 3, T, V, 1], 1.0, &mut rng);
            let targets = vec![1usize, 3];

            // Detach the parameter store so finite differences and the
            // analytic pass share values through it.
            let mut store = std::mem::take(&mut model.store);
            let mut run = |s: &ParamStore,
                           grads: Option<&mut ParamStore>|
             -> Result<f64> {
                model.store = s.clone();
                let mut sess = Session::new();
                sess.tape.set_corruption(if grads.is_some() { corruption } else { None });
                let xid = sess.constant(x.clone());
                let logits = model.forward(&mut sess, xid, true)?;
                let loss_id = sess.tape.label_smoothing_ce(logits, &targets, 0.1)?;
                let loss = sess.tape.value(loss_id).data()[0];
                if let Some(gstore) = grads {
                    sess.backward(loss_id, gstore)?;
                }
                Ok(loss)
            };
            drive(&mut store, opts, &mut run)
        }
    }
}

/// Shared driver: one analytic backward to populate gradients, then the
/// finite-difference sweep against the same closure.
fn drive(
    store: &mut ParamStore,
    opts: &GradCheckOptions,
    run: &mut dyn FnMut(&ParamStore, Option<&mut ParamStore>) -> Result<f64>,
) -> Result<GradCheckReport> {
    store.zero_grads();
    let snapshot = store.clone();
    let mut with_grads = store.clone();
    run(&snapshot, Some(&mut with_grads))?;
    *store = with_grads;
    let mut f = |s: &ParamStore| run(s, None);
    finite_diff_check(&mut f, store, opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ham_and_hgcm_pass_quickly() {
        let opts = GradCheckOptions {
            samples_per_tensor: 6,
            ..GradCheckOptions::default()
        };
        for target in [CheckTarget::Ham, CheckTarget::Hgcm] {
            let report = gradcheck_target(target, 42, &opts, false).unwrap();
            assert!(
                report.max_rel_error < 1e-4,
                "{target}: {}",
                report.max_rel_error
            );
        }
    }

    #[test]
    fn corrupted_adjoint_fails_loudly() {
        let opts = GradCheckOptions {
            samples_per_tensor: 6,
            ..GradCheckOptions::default()
        };
        let report = gradcheck_target(CheckTarget::Mstc, 42, &opts, true).unwrap();
        assert!(report.max_rel_error > 1e-2, "{}", report.max_rel_error);
    }
}
