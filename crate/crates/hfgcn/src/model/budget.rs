//! Parameter and floating-point budgets derived from the architecture
//! configuration.

use super::config::{ModelConfig, ModelKind};
use super::mstc::{baseline_branches, branch_widths, standard_branches, BranchKind};
use super::Model;
use crate::error::Result;

/// Exact parameter tally: builds the parameter store and counts values.
pub fn count_params(config: &ModelConfig) -> Result<usize> {
    Ok(Model::new(config.clone(), 0)?.store.num_values())
}

/// Input shape for the FLOP count: channels, frames, joints, persons.
#[derive(Debug, Clone, Copy)]
pub struct FlopInput {
    pub channels: usize,
    pub frames: usize,
    pub joints: usize,
    pub persons: usize,
}

impl FlopInput {
    pub fn benchmark() -> FlopInput {
        FlopInput {
            channels: 3,
            frames: 64,
            joints: 25,
            persons: 2,
        }
    }
}

/// Floating-point operations as 2 x multiply-adds over all convolutions and
/// contractions of one person stream. Person streams share weights, so with
/// the default two-person input this equals the multiply-add count of the
/// whole input. Normalization, activations, pooling and plain additions are
/// not counted.
pub fn count_flops(config: &ModelConfig, input: FlopInput) -> Result<u64> {
    config.validate()?;
    let v = input.joints as u64;
    let s = config.hypergraphs.len() as u64;
    let mut macs: u64 = 0;
    let mut t = input.frames as u64;

    for spec in &config.blocks {
        let (c_in, c_out) = (spec.c_in as u64, spec.c_out as u64);
        let t_in = t;
        let t_out = t_in.div_ceil(spec.stride as u64);
        let ce = config.embed_width(spec.c_in) as u64;

        match config.kind {
            ModelKind::Hfgcn => {
                // hypergraph-averaged features, one joint-matrix apply per s
                macs += s * c_in * t_in * v * v;
                // attention: queries, keys, group keys
                macs += (2 + s) * ce * c_in * t_in * v;
                // pairwise logits, one map per branch (or one shared map)
                let maps = match config.ham_mode {
                    super::config::HamMode::PerBranch => s,
                    super::config::HamMode::Summed => 1,
                };
                macs += maps * ce * t_in * v * v;
                // per-hypergraph unit
                let unit = 3 * ce * c_in * v          // phi, psi, xi on pooled features
                    + c_in * c_out * t_in * v          // value transform
                    + 2 * ce * c_out * v * v           // two channel expansions
                    + 2 * c_out * t_in * v * v; // fused static apply + attention apply
                macs += s * unit;
            }
            ModelKind::Baseline => {
                let subset = c_in * c_out * t_in * v + c_out * t_in * v * v;
                macs += super::block::BASELINE_SUBSETS as u64 * subset;
            }
        }

        // multi-scale temporal module: strided reduce, then branch stage
        let kinds = match config.kind {
            ModelKind::Hfgcn => standard_branches(),
            ModelKind::Baseline => baseline_branches(),
        };
        for (kind, w) in kinds.iter().zip(branch_widths(spec.c_out, kinds.len())) {
            let w = w as u64;
            macs += c_out * w * t_out * v;
            if let BranchKind::Conv { kernel, .. } = kind {
                macs += w * w * *kernel as u64 * t_out * v;
            }
        }

        if !(spec.c_in == spec.c_out && spec.stride == 1) {
            macs += c_in * c_out * t_out * v; // residual projection
        }
        t = t_out;
    }

    let c_final = config.blocks.last().unwrap().c_out as u64;
    macs += c_final * config.num_classes as u64;

    Ok(2 * macs)
}

/// Structural parameter walk used to cross-check the exact tally.
#[cfg(test)]
fn walk_params(config: &ModelConfig) -> usize {
    let conv = |ci: usize, co: usize| ci * co + co;
    let bn = |c: usize| 2 * c;
    let v = config.num_joints;
    let s = config.hypergraphs.len();
    let mut total = bn(config.max_persons * v * 3); // data normalization
    for spec in &config.blocks {
        let (ci, co) = (spec.c_in, spec.c_out);
        let ce = config.embed_width(ci);
        match config.kind {
            ModelKind::Hfgcn => {
                total += (2 + s) * conv(ci, ce) + s; // q, k, hk_s, gates
                total += s * (3 * conv(ci, ce) + conv(ci, co) + 2 * conv(ce, co));
            }
            ModelKind::Baseline => {
                total += super::block::BASELINE_SUBSETS * conv(ci, co);
            }
        }
        total += bn(co);
        let kinds = match config.kind {
            ModelKind::Hfgcn => standard_branches(),
            ModelKind::Baseline => baseline_branches(),
        };
        for (kind, w) in kinds.iter().zip(branch_widths(co, kinds.len())) {
            total += conv(co, w) + bn(w);
            if let BranchKind::Conv { kernel, .. } = kind {
                total += w * w * kernel + w + bn(w);
            }
        }
        if !(ci == co && spec.stride == 1) {
            total += conv(ci, co) + bn(co);
        }
    }
    total += conv(config.blocks.last().unwrap().c_out, config.num_classes);
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::HypergraphName;

    #[test]
    fn exact_count_matches_structural_walk() {
        for cfg in [
            ModelConfig::full(),
            ModelConfig::baseline(),
            ModelConfig::tiny(),
            ModelConfig::reduced(),
        ] {
            assert_eq!(
                count_params(&cfg).unwrap(),
                walk_params(&cfg),
                "structural walk diverges for kind {:?}",
                cfg.kind
            );
        }
    }

    #[test]
    fn full_model_lands_on_published_budget() {
        let params = count_params(&ModelConfig::full()).unwrap();
        let diff = (params as f64 - 1.81e6).abs() / 1.81e6;
        assert!(diff < 0.10, "full model has {params} params ({diff:+.3} rel)");
    }

    #[test]
    fn hypergraph_deltas_are_equal() {
        let p = |hs: &[HypergraphName]| {
            let mut cfg = ModelConfig::full();
            cfg.hypergraphs = hs.to_vec();
            count_params(&cfg).unwrap()
        };
        let p1 = p(&[HypergraphName::H1]);
        let p2 = p(&[HypergraphName::H1, HypergraphName::H2]);
        let p3 = p(&HypergraphName::ALL);
        assert!(p1 < p2 && p2 < p3);
        assert_eq!(p2 - p1, p3 - p2, "per-hypergraph cost must be identical");
    }

    #[test]
    fn flop_budget_within_published_tolerances() {
        let full = count_flops(&ModelConfig::full(), FlopInput::benchmark()).unwrap();
        let base = count_flops(&ModelConfig::baseline(), FlopInput::benchmark()).unwrap();
        let full_rel = (full as f64 - 2.24e9).abs() / 2.24e9;
        let base_rel = (base as f64 - 1.46e9).abs() / 1.46e9;
        assert!(full_rel < 0.15, "full flops {full} off by {full_rel:.3}");
        assert!(base_rel < 0.15, "baseline flops {base} off by {base_rel:.3}");
    }

    #[test]
    fn summed_mode_is_cheaper_not_bigger() {
        let mut cfg = ModelConfig::full();
        cfg.ham_mode = super::super::config::HamMode::Summed;
        let summed = count_flops(&cfg, FlopInput::benchmark()).unwrap();
        let branch = count_flops(&ModelConfig::full(), FlopInput::benchmark()).unwrap();
        assert!(summed < branch);
        assert_eq!(
            count_params(&cfg).unwrap(),
            count_params(&ModelConfig::full()).unwrap()
        );
    }
}
