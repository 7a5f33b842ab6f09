//! Multi-scale temporal convolution: parallel branches, each opening with a
//! strided 1x1 reduction, concatenated back to the input width.

use super::layers::TemporalConvLayer;
use crate::autodiff::{BatchNorm, ParamStore, Session, TensorId};
use crate::error::{Error, Result};
use rand_chacha::ChaCha8Rng;

/// Second stage of a branch, after the 1x1 reduction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchKind {
    /// Dilated temporal convolution.
    Conv { kernel: usize, dilation: usize },
    /// Temporal max pooling.
    MaxPool { kernel: usize },
    /// Reduction only.
    Reduce,
}

/// The branch set of the hypergraph blocks.
pub fn standard_branches() -> Vec<BranchKind> {
    vec![
        BranchKind::Conv { kernel: 5, dilation: 1 },
        BranchKind::Conv { kernel: 5, dilation: 2 },
        BranchKind::MaxPool { kernel: 3 },
    ]
}

/// The branch set of the baseline blocks (extra reduce-only branch).
pub fn baseline_branches() -> Vec<BranchKind> {
    vec![
        BranchKind::Conv { kernel: 5, dilation: 1 },
        BranchKind::Conv { kernel: 5, dilation: 2 },
        BranchKind::MaxPool { kernel: 3 },
        BranchKind::Reduce,
    ]
}

/// Branch output widths: near-even split of `c_out`, remainder on the first.
pub fn branch_widths(c_out: usize, branches: usize) -> Vec<usize> {
    let base = c_out / branches;
    let mut widths = vec![base; branches];
    widths[0] = c_out - base * (branches - 1);
    widths
}

#[derive(Debug, Clone)]
struct Branch {
    reduce: TemporalConvLayer, // kernel 1, carries the stride
    bn_reduce: BatchNorm,
    kind: BranchKind,
    conv: Option<TemporalConvLayer>,
    bn_out: Option<BatchNorm>,
}

#[derive(Debug, Clone)]
pub struct MultiScaleTemporalConv {
    branches: Vec<Branch>,
    pub stride: usize,
}

impl MultiScaleTemporalConv {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        channels: usize,
        stride: usize,
        kinds: &[BranchKind],
    ) -> Result<Self> {
        if kinds.is_empty() {
            return Err(Error::Config("temporal module needs at least one branch".into()));
        }
        let widths = branch_widths(channels, kinds.len());
        if widths.iter().any(|&w| w == 0) {
            return Err(Error::Config(format!(
                "channel width {channels} too small for {} branches",
                kinds.len()
            )));
        }
        let mut branches = Vec::with_capacity(kinds.len());
        for (i, (&kind, &w)) in kinds.iter().zip(&widths).enumerate() {
            let bname = format!("{name}.b{i}");
            let reduce = TemporalConvLayer::new(
                store,
                rng,
                &format!("{bname}.reduce"),
                channels,
                w,
                1,
                stride,
                1,
                true,
            );
            let bn_reduce = BatchNorm::new(store, &format!("{bname}.bn_reduce"), w);
            let (conv, bn_out) = match kind {
                BranchKind::Conv { kernel, dilation } => {
                    let conv = TemporalConvLayer::new(
                        store,
                        rng,
                        &format!("{bname}.conv"),
                        w,
                        w,
                        kernel,
                        1,
                        dilation,
                        true,
                    );
                    let bn = BatchNorm::new(store, &format!("{bname}.bn_out"), w);
                    (Some(conv), Some(bn))
                }
                BranchKind::MaxPool { .. } | BranchKind::Reduce => (None, None),
            };
            branches.push(Branch {
                reduce,
                bn_reduce,
                kind,
                conv,
                bn_out,
            });
        }
        Ok(MultiScaleTemporalConv { branches, stride })
    }

    pub fn forward(
        &mut self,
        sess: &mut Session,
        store: &ParamStore,
        x: TensorId,
        training: bool,
    ) -> Result<TensorId> {
        let mut outs = Vec::with_capacity(self.branches.len());
        for branch in self.branches.iter_mut() {
            let mut y = branch.reduce.forward(sess, store, x)?;
            y = branch.bn_reduce.forward(sess, store, y, training)?;
            match branch.kind {
                BranchKind::Conv { .. } => {
                    y = sess.tape.relu(y)?;
                    y = branch.conv.as_ref().unwrap().forward(sess, store, y)?;
                    y = branch.bn_out.as_mut().unwrap().forward(sess, store, y, training)?;
                }
                BranchKind::MaxPool { kernel } => {
                    y = sess.tape.max_pool_temporal(y, kernel, 1)?;
                }
                BranchKind::Reduce => {}
            }
            outs.push(y);
        }
        sess.tape.concat_channels(&outs)
    }

    pub fn visit_bns(&mut self, f: &mut impl FnMut(&mut BatchNorm)) {
        for b in self.branches.iter_mut() {
            f(&mut b.bn_reduce);
            if let Some(bn) = b.bn_out.as_mut() {
                f(bn);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn widths_sum_to_channels() {
        assert_eq!(branch_widths(64, 3), vec![22, 21, 21]);
        assert_eq!(branch_widths(128, 3), vec![44, 42, 42]);
        assert_eq!(branch_widths(64, 4), vec![16, 16, 16, 16]);
        for c in [6, 7, 9, 32, 96] {
            assert_eq!(branch_widths(c, 3).iter().sum::<usize>(), c);
        }
    }

    #[test]
    fn stride_halves_frames() {
        let mut store = ParamStore::new();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut mstc =
            MultiScaleTemporalConv::new(&mut store, &mut rng, "t", 6, 2, &standard_branches())
                .unwrap();
        let mut sess = Session::new();
        let x = sess.constant(crate::tensor::Tensor::uniform(&[2, 6, 64, 5], 1.0, &mut rng));
        let y = mstc.forward(&mut sess, &store, x, true).unwrap();
        assert_eq!(sess.tape.shape(y), &[2, 6, 32, 5]);
    }

    #[test]
    fn odd_frame_count_rounds_up() {
        let mut store = ParamStore::new();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let mut mstc =
            MultiScaleTemporalConv::new(&mut store, &mut rng, "t", 6, 2, &standard_branches())
                .unwrap();
        let mut sess = Session::new();
        let x = sess.constant(crate::tensor::Tensor::uniform(&[1, 6, 7, 3], 1.0, &mut rng));
        let y = mstc.forward(&mut sess, &store, x, true).unwrap();
        assert_eq!(sess.tape.shape(y)[2], 4);
    }
}
