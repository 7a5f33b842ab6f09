//! Joint-graph topology: the normalized physical adjacency and the three
//! hypergraph incidence matrices with their propagation operators.

use crate::error::{Error, Result};
use crate::layout::{BonePairList, HypergraphName, SkeletonLayout};
use crate::tensor::Tensor;

/// Symmetric degree-normalized adjacency `D^{-1/2} (A_phys + I) D^{-1/2}`
/// of the physical bone graph.
#[derive(Debug, Clone)]
pub struct AdjacencyMatrix {
    matrix: Tensor, // (V, V)
}

impl AdjacencyMatrix {
    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }

    pub fn num_joints(&self) -> usize {
        self.matrix.shape()[0]
    }
}

/// Build the normalized adjacency from a bone list. Self-loops are added to
/// every joint and duplicate edges collapse.
pub fn build_adjacency(bones: &BonePairList, num_joints: usize) -> Result<AdjacencyMatrix> {
    if bones.num_joints() != num_joints {
        return Err(Error::Layout(format!(
            "bone list covers {} joints, expected {num_joints}",
            bones.num_joints()
        )));
    }
    // A_phys + I as a 0/1 matrix
    let mut a = vec![0.0f64; num_joints * num_joints];
    for i in 0..num_joints {
        a[i * num_joints + i] = 1.0;
    }
    for &(c, p) in bones.pairs() {
        a[c * num_joints + p] = 1.0;
        a[p * num_joints + c] = 1.0;
    }
    let degrees: Vec<f64> = (0..num_joints)
        .map(|i| a[i * num_joints..(i + 1) * num_joints].iter().sum())
        .collect();
    let mut m = Tensor::zeros(&[num_joints, num_joints]);
    let md = m.data_mut();
    for i in 0..num_joints {
        for j in 0..num_joints {
            md[i * num_joints + j] =
                a[i * num_joints + j] / (degrees[i] * degrees[j]).sqrt();
        }
    }
    Ok(AdjacencyMatrix { matrix: m })
}

/// V x E vertex-to-hyperedge membership matrix for one joint partition.
#[derive(Debug, Clone)]
pub struct HypergraphIncidence {
    pub name: String,
    incidence: Tensor, // (V, E) with 0/1 entries
}

impl HypergraphIncidence {
    pub fn incidence(&self) -> &Tensor {
        &self.incidence
    }

    pub fn num_joints(&self) -> usize {
        self.incidence.shape()[0]
    }

    pub fn num_edges(&self) -> usize {
        self.incidence.shape()[1]
    }

    /// Hyperedge index each joint belongs to.
    pub fn edge_of(&self) -> Vec<usize> {
        let (v, e) = (self.num_joints(), self.num_edges());
        (0..v)
            .map(|i| {
                (0..e)
                    .find(|&j| self.incidence.data()[i * e + j] != 0.0)
                    .expect("partition rows have exactly one 1")
            })
            .collect()
    }
}

/// Build an incidence matrix from a joint partition. The sets must be
/// disjoint, non-empty, and cover `0..num_joints`.
pub fn build_partition_hypergraph(
    name: &str,
    partition: &[Vec<usize>],
    num_joints: usize,
) -> Result<HypergraphIncidence> {
    if partition.is_empty() {
        return Err(Error::Layout("partition has no hyperedges".into()));
    }
    let mut owner = vec![None; num_joints];
    let mut overlaps = Vec::new();
    for (e, edge) in partition.iter().enumerate() {
        if edge.is_empty() {
            return Err(Error::Layout(format!("hyperedge {e} of '{name}' is empty")));
        }
        for &j in edge {
            if j >= num_joints {
                return Err(Error::Layout(format!(
                    "joint {j} in '{name}' is out of range for {num_joints} joints"
                )));
            }
            if owner[j].is_some() {
                overlaps.push(j);
            }
            owner[j] = Some(e);
        }
    }
    let gaps: Vec<usize> = owner
        .iter()
        .enumerate()
        .filter(|(_, o)| o.is_none())
        .map(|(j, _)| j)
        .collect();
    if !overlaps.is_empty() || !gaps.is_empty() {
        return Err(Error::Layout(format!(
            "'{name}' is not a partition (overlapping joints {overlaps:?}, uncovered joints {gaps:?})"
        )));
    }
    let e = partition.len();
    let mut h = Tensor::zeros(&[num_joints, e]);
    for (j, o) in owner.iter().enumerate() {
        h.data_mut()[j * e + o.unwrap()] = 1.0;
    }
    Ok(HypergraphIncidence {
        name: name.to_string(),
        incidence: h,
    })
}

/// Degree-normalized propagation `S = D_v^{-1} H D_e^{-1} H^T` with unit
/// hyperedge weights; row-stochastic for valid incidences.
pub fn propagation_matrix(h: &HypergraphIncidence) -> Tensor {
    let (v, e) = (h.num_joints(), h.num_edges());
    let hd = h.incidence().data();
    let dv: Vec<f64> = (0..v).map(|i| hd[i * e..(i + 1) * e].iter().sum()).collect();
    let de: Vec<f64> = (0..e).map(|j| (0..v).map(|i| hd[i * e + j]).sum()).collect();
    let mut s = Tensor::zeros(&[v, v]);
    let sd = s.data_mut();
    for i in 0..v {
        for j in 0..v {
            let mut acc = 0.0;
            for k in 0..e {
                acc += hd[i * e + k] * hd[j * e + k] / de[k];
            }
            sd[i * v + j] = acc / dv[i];
        }
    }
    s
}

/// The enabled hypergraphs with their precomputed propagation matrices.
#[derive(Debug, Clone)]
pub struct HypergraphSet {
    pub members: Vec<HypergraphIncidence>,
    propagation: Vec<Tensor>,
}

impl HypergraphSet {
    /// Build from a layout and the enabled subset (ordered). The named model
    /// topologies must have at least two hyperedges each.
    pub fn from_layout(layout: &SkeletonLayout, enabled: &[HypergraphName]) -> Result<Self> {
        if enabled.is_empty() {
            return Err(Error::Config("at least one hypergraph must be enabled".into()));
        }
        let mut members = Vec::new();
        let mut propagation = Vec::new();
        for &h in enabled {
            let incidence = build_partition_hypergraph(
                &h.to_string(),
                layout.partition(h),
                layout.num_joints,
            )?;
            if incidence.num_edges() < 2 {
                return Err(Error::Layout(format!(
                    "model topology {h} must have at least 2 hyperedges"
                )));
            }
            propagation.push(propagation_matrix(&incidence));
            members.push(incidence);
        }
        Ok(HypergraphSet {
            members,
            propagation,
        })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn propagation(&self, i: usize) -> &Tensor {
        &self.propagation[i]
    }
}

/// `hX[i][b,c,t,v] = sum_u S_i[v,u] x[b,c,t,u]`: hypergraph-averaged copies
/// of the features, one per enabled hypergraph. (The stacked view has shape
/// `(S, B, C, T, V)`.)
pub fn apply_hypergraphs(x: &Tensor, set: &HypergraphSet) -> Result<Vec<Tensor>> {
    (0..set.len())
        .map(|i| {
            crate::autodiff::kernels::contract(
                crate::autodiff::ContractKind::JointMatrixApply,
                set.propagation(i),
                x,
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_joint_adjacency_is_identity() {
        let bones = BonePairList::new(vec![(0, 0)], 1).unwrap();
        let a = build_adjacency(&bones, 1).unwrap();
        assert_eq!(a.matrix().data(), &[1.0]);
    }

    #[test]
    fn two_joint_bone_gives_uniform_half() {
        // Hand-evaluated D^{-1/2}(A+I)D^{-1/2} for one bone: all entries 0.5.
        let bones = BonePairList::new(vec![(0, 1), (1, 1)], 2).unwrap();
        let a = build_adjacency(&bones, 2).unwrap();
        for &v in a.matrix().data() {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn ntu_prenormalization_row_sums_equal_one_plus_degree() {
        // Degree-count oracle on the raw bone graph.
        let layout = SkeletonLayout::ntu25();
        let mut degree = vec![0usize; 25];
        for &(c, p) in layout.bones.pairs() {
            if c != p {
                degree[c] += 1;
                degree[p] += 1;
            }
        }
        // Reconstruct A_phys + I row sums from the normalized matrix by
        // un-normalizing: entry (i,j) was a_ij / sqrt(d_i d_j).
        let a = build_adjacency(&layout.bones, 25).unwrap();
        let d: Vec<f64> = (0..25).map(|i| (degree[i] + 1) as f64).collect();
        for i in 0..25 {
            let row_sum: f64 = (0..25)
                .map(|j| a.matrix().data()[i * 25 + j] * (d[i] * d[j]).sqrt())
                .sum();
            assert!(
                (row_sum - d[i]).abs() < 1e-9,
                "row {i}: {row_sum} vs {}",
                d[i]
            );
        }
    }

    #[test]
    fn adjacency_is_symmetric_and_nonnegative() {
        let layout = SkeletonLayout::ntu25();
        let a = build_adjacency(&layout.bones, 25).unwrap();
        for i in 0..25 {
            for j in 0..25 {
                let ij = a.matrix().data()[i * 25 + j];
                let ji = a.matrix().data()[j * 25 + i];
                assert!(ij >= 0.0);
                assert!((ij - ji).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn whole_set_partition_gives_single_ones_column() {
        let partition = vec![(0..7).collect::<Vec<_>>()];
        let h = build_partition_hypergraph("all", &partition, 7).unwrap();
        assert_eq!(h.num_edges(), 1);
        assert!(h.incidence().data().iter().all(|&v| v == 1.0));
        // Propagation of the all-joints hyperedge is uniform averaging.
        let s = propagation_matrix(&h);
        for &v in s.data() {
            assert!((v - 1.0 / 7.0).abs() < 1e-12);
        }
    }

    #[test]
    fn singleton_partition_propagates_as_identity() {
        let partition: Vec<Vec<usize>> = (0..5).map(|j| vec![j]).collect();
        let h = build_partition_hypergraph("singletons", &partition, 5).unwrap();
        let s = propagation_matrix(&h);
        for i in 0..5 {
            for j in 0..5 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_eq!(s.data()[i * 5 + j], expect);
            }
        }
    }

    #[test]
    fn partition_errors_list_offending_joints() {
        let overlap = vec![vec![0, 1], vec![1, 2]];
        match build_partition_hypergraph("x", &overlap, 3) {
            Err(Error::Layout(msg)) => assert!(msg.contains("[1]"), "{msg}"),
            other => panic!("expected layout error, got {other:?}"),
        }
        let gap = vec![vec![0], vec![2]];
        match build_partition_hypergraph("x", &gap, 3) {
            Err(Error::Layout(msg)) => assert!(msg.contains("[1]"), "{msg}"),
            other => panic!("expected layout error, got {other:?}"),
        }
    }

    #[test]
    fn h2_propagation_is_blockwise_uniform() {
        // Direct matrix-product oracle: with unit weights and a partition,
        // S has 1/|e| inside each group's block and 0 elsewhere.
        let layout = SkeletonLayout::ntu25();
        let h = build_partition_hypergraph("h2", layout.partition(HypergraphName::H2), 25).unwrap();
        let s = propagation_matrix(&h);
        let edge_of = h.edge_of();
        let sizes: Vec<usize> = (0..h.num_edges())
            .map(|e| edge_of.iter().filter(|&&x| x == e).count())
            .collect();
        for i in 0..25 {
            for j in 0..25 {
                let expect = if edge_of[i] == edge_of[j] {
                    1.0 / sizes[edge_of[i]] as f64
                } else {
                    0.0
                };
                assert!((s.data()[i * 25 + j] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn propagation_rows_are_stochastic() {
        let layout = SkeletonLayout::ntu25();
        let set = HypergraphSet::from_layout(&layout, &HypergraphName::ALL).unwrap();
        for i in 0..set.len() {
            let s = set.propagation(i);
            for row in s.data().chunks(25) {
                let sum: f64 = row.iter().sum();
                assert!((sum - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn hypergraph_apply_matches_group_mean_oracle() {
        let layout = SkeletonLayout::ntu25();
        let set = HypergraphSet::from_layout(&layout, &[HypergraphName::H2]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::uniform(&[2, 3, 4, 25], 1.0, &mut rng);
        let hx = apply_hypergraphs(&x, &set).unwrap();
        let edge_of = set.members[0].edge_of();
        for b in 0..2 {
            for c in 0..3 {
                for t in 0..4 {
                    for v in 0..25 {
                        // group mean over the hyperedge containing v
                        let group: Vec<usize> = (0..25)
                            .filter(|&u| edge_of[u] == edge_of[v])
                            .collect();
                        let mean: f64 = group
                            .iter()
                            .map(|&u| x.at(&[b, c, t, u]))
                            .sum::<f64>()
                            / group.len() as f64;
                        assert!((hx[0].at(&[b, c, t, v]) - mean).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn constant_features_are_preserved() {
        let layout = SkeletonLayout::ntu25();
        let set = HypergraphSet::from_layout(&layout, &HypergraphName::ALL).unwrap();
        let x = Tensor::filled(&[1, 2, 3, 25], 4.25);
        for hx in apply_hypergraphs(&x, &set).unwrap() {
            for &v in hx.data() {
                assert!((v - 4.25).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn relabeling_joints_commutes_with_everything() {
        // Permutation property: A -> P A P^T, H -> P H, and apply commutes.
        let layout = SkeletonLayout::ntu25();
        let v = 25;
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut perm: Vec<usize> = (0..v).collect();
        use rand::seq::SliceRandom;
        perm.shuffle(&mut rng);

        let a = build_adjacency(&layout.bones, v).unwrap();
        let permuted_bones: Vec<(usize, usize)> = layout
            .bones
            .pairs()
            .iter()
            .map(|&(c, p)| (perm[c], perm[p]))
            .collect();
        let ap = build_adjacency(&BonePairList::new(permuted_bones, v).unwrap(), v).unwrap();
        for i in 0..v {
            for j in 0..v {
                assert!(
                    (ap.matrix().data()[perm[i] * v + perm[j]]
                        - a.matrix().data()[i * v + j])
                        .abs()
                        < 1e-12
                );
            }
        }

        let part = layout.partition(HypergraphName::H2);
        let permuted_part: Vec<Vec<usize>> = part
            .iter()
            .map(|edge| edge.iter().map(|&j| perm[j]).collect())
            .collect();
        let h = build_partition_hypergraph("h2", part, v).unwrap();
        let hp = build_partition_hypergraph("h2p", &permuted_part, v).unwrap();
        let s = propagation_matrix(&h);
        let sp = propagation_matrix(&hp);
        let x = Tensor::uniform(&[1, 2, 3, v], 1.0, &mut rng);
        let mut xp = Tensor::zeros(&[1, 2, 3, v]);
        for b in 0..1 {
            for c in 0..2 {
                for t in 0..3 {
                    for j in 0..v {
                        let val = x.at(&[b, c, t, j]);
                        xp.set(&[b, c, t, perm[j]], val);
                    }
                }
            }
        }
        use crate::autodiff::{kernels::contract, ContractKind};
        let y = contract(ContractKind::JointMatrixApply, &s, &x).unwrap();
        let yp = contract(ContractKind::JointMatrixApply, &sp, &xp).unwrap();
        for b in 0..1 {
            for c in 0..2 {
                for t in 0..3 {
                    for j in 0..v {
                        assert!(
                            (yp.at(&[b, c, t, perm[j]]) - y.at(&[b, c, t, j])).abs() < 1e-12
                        );
                    }
                }
            }
        }
    }
}
