//! One backbone block: spatial unit, normalization, multi-scale temporal
//! convolution, and the residual connection.

use super::config::{BlockSpec, HamMode, XiInput};
use super::ham::HyperAttention;
use super::hgcm::HgcmUnit;
use super::layers::{Conv1x1, TemporalConvLayer};
use super::mstc::{baseline_branches, standard_branches, MultiScaleTemporalConv};
use crate::autodiff::{BatchNorm, ContractKind, ParamStore, Session, TensorId};
use crate::error::Result;
use rand_chacha::ChaCha8Rng;

/// Constant topology inputs for one forward pass, already on the tape.
#[derive(Debug, Clone)]
pub struct TopologyIds {
    pub adjacency: TensorId,
    pub propagation: Vec<TensorId>,
}

#[derive(Debug, Clone)]
enum Spatial {
    Hyper {
        attention: HyperAttention,
        units: Vec<HgcmUnit>,
    },
    Vanilla {
        subsets: Vec<Conv1x1>,
    },
}

#[derive(Debug, Clone)]
pub struct Block {
    spatial: Spatial,
    bn: BatchNorm,
    mstc: MultiScaleTemporalConv,
    residual: Option<(TemporalConvLayer, BatchNorm)>,
}

/// Vanilla subset count of the baseline spatial unit.
pub const BASELINE_SUBSETS: usize = 3;

impl Block {
    #[allow(clippy::too_many_arguments)]
    pub fn new_hfgcn(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        spec: BlockSpec,
        embed_width: usize,
        num_hypergraphs: usize,
        ham_mode: HamMode,
        xi_input: XiInput,
    ) -> Result<Self> {
        let attention = HyperAttention::new(
            store,
            rng,
            &format!("{name}.ham"),
            spec.c_in,
            embed_width,
            num_hypergraphs,
            ham_mode,
        );
        let gate_init = 1.0 / num_hypergraphs as f64;
        let units = (0..num_hypergraphs)
            .map(|s| {
                HgcmUnit::new(
                    store,
                    rng,
                    &format!("{name}.unit{s}"),
                    spec.c_in,
                    spec.c_out,
                    embed_width,
                    gate_init,
                    xi_input,
                )
            })
            .collect();
        Self::finish(
            store,
            rng,
            name,
            spec,
            Spatial::Hyper { attention, units },
            &standard_branches(),
        )
    }

    pub fn new_baseline(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        spec: BlockSpec,
    ) -> Result<Self> {
        let subsets = (0..BASELINE_SUBSETS)
            .map(|s| {
                Conv1x1::new(
                    store,
                    rng,
                    &format!("{name}.subset{s}"),
                    spec.c_in,
                    spec.c_out,
                    true,
                )
            })
            .collect();
        Self::finish(
            store,
            rng,
            name,
            spec,
            Spatial::Vanilla { subsets },
            &baseline_branches(),
        )
    }

    fn finish(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        spec: BlockSpec,
        spatial: Spatial,
        branches: &[super::mstc::BranchKind],
    ) -> Result<Self> {
        let bn = BatchNorm::new(store, &format!("{name}.bn"), spec.c_out);
        let mstc = MultiScaleTemporalConv::new(
            store,
            rng,
            &format!("{name}.mstc"),
            spec.c_out,
            spec.stride,
            branches,
        )?;
        let residual = if spec.c_in == spec.c_out && spec.stride == 1 {
            None
        } else {
            let conv = TemporalConvLayer::new(
                store,
                rng,
                &format!("{name}.res"),
                spec.c_in,
                spec.c_out,
                1,
                spec.stride,
                1,
                true,
            );
            let bn = BatchNorm::new(store, &format!("{name}.res_bn"), spec.c_out);
            Some((conv, bn))
        };
        Ok(Block {
            spatial,
            bn,
            mstc,
            residual,
        })
    }

    pub fn forward(
        &mut self,
        sess: &mut Session,
        store: &ParamStore,
        x: TensorId,
        topology: &TopologyIds,
        training: bool,
    ) -> Result<TensorId> {
        let spatial_out = match &self.spatial {
            Spatial::Hyper { attention, units } => {
                // Hypergraph-averaged copies of the block input, one per
                // enabled hypergraph.
                let hx: Vec<TensorId> = topology
                    .propagation
                    .iter()
                    .map(|&p| sess.tape.contract(ContractKind::JointMatrixApply, p, x))
                    .collect::<Result<_>>()?;
                let ha = attention.forward(sess, store, x, &hx)?;
                let mut sum = None;
                for (s, unit) in units.iter().enumerate() {
                    let out =
                        unit.forward(sess, store, x, hx[s], ha[s], topology.adjacency)?;
                    sum = Some(match sum {
                        None => out,
                        Some(acc) => sess.tape.add(acc, out)?,
                    });
                }
                sum.expect("at least one hypergraph unit")
            }
            Spatial::Vanilla { subsets } => {
                let mut sum = None;
                for conv in subsets {
                    let values = conv.forward(sess, store, x)?;
                    let out = sess.tape.contract(
                        ContractKind::JointMatrixApply,
                        topology.adjacency,
                        values,
                    )?;
                    sum = Some(match sum {
                        None => out,
                        Some(acc) => sess.tape.add(acc, out)?,
                    });
                }
                sum.expect("at least one subset")
            }
        };

        let normed = self.bn.forward(sess, store, spatial_out, training)?;
        let activated = sess.tape.relu(normed)?;
        let temporal = self.mstc.forward(sess, store, activated, training)?;

        let shortcut = match &mut self.residual {
            None => x,
            Some((conv, bn)) => {
                let projected = conv.forward(sess, store, x)?;
                bn.forward(sess, store, projected, training)?
            }
        };
        let sum = sess.tape.add(temporal, shortcut)?;
        sess.tape.relu(sum)
    }

    pub fn visit_bns(&mut self, f: &mut impl FnMut(&mut BatchNorm)) {
        f(&mut self.bn);
        self.mstc.visit_bns(f);
        if let Some((_, bn)) = self.residual.as_mut() {
            f(bn);
        }
    }
}
