//! The full network: input normalization, the block stack, pooling over
//! frames, joints and persons, and the classifier head.

mod block;
mod budget;
mod checkpoint;
pub(crate) mod config;
mod ham;
mod hgcm;
mod layers;
mod mstc;

pub use block::TopologyIds;
pub use budget::{count_flops, count_params, FlopInput};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointData, MAGIC as CHECKPOINT_MAGIC};
pub use config::{backbone_blocks, BlockSpec, HamMode, ModelConfig, ModelKind, XiInput};
pub use ham::HyperAttention;
pub use hgcm::HgcmUnit;
pub use layers::{Conv1x1, TemporalConvLayer};
pub use mstc::{
    baseline_branches, branch_widths, standard_branches, BranchKind, MultiScaleTemporalConv,
};

use crate::autodiff::{BatchNorm, ParamStore, Session, TensorId};
use crate::error::{Error, Result};
use crate::layout::SkeletonLayout;
use crate::tensor::Tensor;
use crate::topology::{build_adjacency, AdjacencyMatrix, HypergraphSet};
use block::Block;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    data_bn: BatchNorm,
    blocks: Vec<Block>,
    classifier: Conv1x1,
    adjacency: AdjacencyMatrix,
    hypergraphs: HypergraphSet,
    pub layout: SkeletonLayout,
}

impl Model {
    /// Build a freshly initialized model. Weight draws are deterministic in
    /// `seed`; the three topology matrices come from the layout's bone list
    /// and partition files.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Model> {
        config.validate()?;
        let mut layout = SkeletonLayout::by_name(&config.layout)?;
        if let Some(dir) = &config.partition_dir {
            layout.load_partition_overrides(dir)?;
        }
        if layout.num_joints != config.num_joints {
            return Err(Error::Config(format!(
                "layout '{}' has {} joints, config expects {}",
                layout.name, layout.num_joints, config.num_joints
            )));
        }
        let adjacency = build_adjacency(&layout.bones, config.num_joints)?;
        let hypergraphs = HypergraphSet::from_layout(&layout, &config.hypergraphs)?;

        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data_channels = config.max_persons * config.num_joints * 3;
        let data_bn = BatchNorm::new(&mut store, "data_bn", data_channels);

        let mut blocks = Vec::with_capacity(config.blocks.len());
        for (i, &spec) in config.blocks.iter().enumerate() {
            let name = format!("block{i}");
            let block = match config.kind {
                ModelKind::Hfgcn => Block::new_hfgcn(
                    &mut store,
                    &mut rng,
                    &name,
                    spec,
                    config.embed_width(spec.c_in),
                    config.hypergraphs.len(),
                    config.ham_mode,
                    config.xi_input,
                )?,
                ModelKind::Baseline => Block::new_baseline(&mut store, &mut rng, &name, spec)?,
            };
            blocks.push(block);
        }

        let c_final = config.blocks.last().unwrap().c_out;
        // Final head initialized a factor 1/sqrt(C) below the fan-in rule so
        // fresh logits start near zero.
        let scale = 1.0 / c_final as f64;
        let classifier = Conv1x1::with_scale(
            &mut store,
            &mut rng,
            "classifier",
            c_final,
            config.num_classes,
            true,
            scale,
        );

        Ok(Model {
            config,
            store,
            data_bn,
            blocks,
            classifier,
            adjacency,
            hypergraphs,
            layout,
        })
    }

    pub fn adjacency(&self) -> &AdjacencyMatrix {
        &self.adjacency
    }

    pub fn hypergraphs(&self) -> &HypergraphSet {
        &self.hypergraphs
    }

    /// Substitute the topology (used by the permutation-equivariance suite).
    pub fn set_topology(&mut self, adjacency: AdjacencyMatrix, hypergraphs: HypergraphSet) -> Result<()> {
        let v = self.config.num_joints;
        if adjacency.num_joints() != v {
            return Err(Error::Shape(format!(
                "adjacency is {}x{}, expected {v}x{v}",
                adjacency.num_joints(),
                adjacency.num_joints()
            )));
        }
        if hypergraphs.len() != self.hypergraphs.len() {
            return Err(Error::Shape("hypergraph count changed".into()));
        }
        self.adjacency = adjacency;
        self.hypergraphs = hypergraphs;
        Ok(())
    }

    /// Forward a batch `(B, 3, T, V, M)` to logits `(B, K)`.
    ///
    /// Persons share weights: the batch is flattened to person streams for
    /// the block stack, pooled over frames and joints, then averaged over
    /// persons before the classifier.
    pub fn forward(
        &mut self,
        sess: &mut Session,
        x: TensorId,
        training: bool,
    ) -> Result<TensorId> {
        let shape = sess.tape.shape(x).to_vec();
        if shape.len() != 5 || shape[1] != 3 {
            return Err(Error::Shape(format!(
                "model input must be (B,3,T,V,M), got {shape:?}"
            )));
        }
        let (b, t, v, m) = (shape[0], shape[2], shape[3], shape[4]);
        if v != self.config.num_joints || m != self.config.max_persons {
            return Err(Error::Shape(format!(
                "input (V={v}, M={m}) does not match config (V={}, M={})",
                self.config.num_joints, self.config.max_persons
            )));
        }

        let Model {
            store,
            data_bn,
            blocks,
            classifier,
            adjacency,
            hypergraphs,
            ..
        } = self;

        // Normalize over per-(person,joint,channel) streams.
        let xp = sess.tape.permute(x, &[0, 4, 3, 1, 2])?; // (B,M,V,C,T)
        let flat = sess.tape.reshape(xp, &[b, m * v * 3, t])?;
        let normed = data_bn.forward(sess, store, flat, training)?;
        let back = sess.tape.reshape(normed, &[b, m, v, 3, t])?;
        let to_streams = sess.tape.permute(back, &[0, 1, 3, 4, 2])?; // (B,M,C,T,V)
        let mut h = sess.tape.reshape(to_streams, &[b * m, 3, t, v])?;

        let topology = TopologyIds {
            adjacency: sess.constant(adjacency.matrix().clone()),
            propagation: (0..hypergraphs.len())
                .map(|i| sess.constant(hypergraphs.propagation(i).clone()))
                .collect(),
        };

        for block in blocks.iter_mut() {
            h = block.forward(sess, store, h, &topology, training)?;
        }

        let pooled = sess.tape.mean_axes(h, &[2, 3])?; // (B*M, C)
        let c_final = sess.tape.shape(pooled)[1];
        let per_person = sess.tape.reshape(pooled, &[b, m, c_final])?;
        let fused = sess.tape.mean_axes(per_person, &[1])?; // (B, C)
        classifier.forward(sess, store, fused)
    }

    pub fn visit_bns(&mut self, f: &mut impl FnMut(&mut BatchNorm)) {
        f(&mut self.data_bn);
        for b in self.blocks.iter_mut() {
            b.visit_bns(f);
        }
    }

    /// Convenience: run a forward pass on plain data and return the logits
    /// as a tensor (no gradients kept).
    pub fn logits(&mut self, x: &Tensor, training: bool) -> Result<Tensor> {
        let mut sess = Session::new();
        let xid = sess.constant(x.clone());
        let out = self.forward(&mut sess, xid, training)?;
        Ok(sess.tape.value(out).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_forward_has_expected_shape() {
        let mut model = Model::new(ModelConfig::tiny(), 1).unwrap();
        let x = Tensor::uniform(
            &[2, 3, 8, 25, 1],
            0.5,
            &mut ChaCha8Rng::seed_from_u64(2),
        );
        let logits = model.logits(&x, true).unwrap();
        assert_eq!(logits.shape(), &[2, 4]);
        assert!(logits.is_finite());
    }

    #[test]
    fn zero_input_with_zero_head_gives_equal_logits() {
        let mut model = Model::new(ModelConfig::tiny(), 3).unwrap();
        // Zero the classifier so logits must all coincide.
        for p in model.store.iter_mut() {
            if p.name.starts_with("classifier") {
                p.value = Tensor::zeros(p.value.shape());
            }
        }
        let x = Tensor::zeros(&[1, 3, 8, 25, 1]);
        let logits = model.logits(&x, true).unwrap();
        let first = logits.data()[0];
        for &l in logits.data() {
            assert!((l - first).abs() < 1e-12);
        }
    }

    #[test]
    fn eval_before_training_errors() {
        let mut model = Model::new(ModelConfig::tiny(), 4).unwrap();
        let x = Tensor::zeros(&[1, 3, 8, 25, 1]);
        match model.logits(&x, false) {
            Err(Error::State(_)) => {}
            other => panic!("expected state error, got {other:?}"),
        }
    }

    #[test]
    fn wrong_person_count_rejected() {
        let mut model = Model::new(ModelConfig::tiny(), 5).unwrap();
        let x = Tensor::zeros(&[1, 3, 8, 25, 2]);
        assert!(model.logits(&x, true).is_err());
    }
}
