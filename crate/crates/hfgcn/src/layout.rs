//! Skeleton layouts: joint count, bone list, and the shipped hypergraph
//! partitions. Partition memberships live in editable data files so they can
//! be corrected without code changes.

use crate::error::{Error, Result};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

/// Directed bones as (child, parent) pairs; the root pairs with itself.
#[derive(Debug, Clone)]
pub struct BonePairList {
    pairs: Vec<(usize, usize)>,
    parent: Vec<usize>,
}

impl BonePairList {
    /// Every joint must appear exactly once as a child and indices must be
    /// below `num_joints`.
    pub fn new(pairs: Vec<(usize, usize)>, num_joints: usize) -> Result<Self> {
        let mut parent = vec![usize::MAX; num_joints];
        for &(child, par) in &pairs {
            if child >= num_joints || par >= num_joints {
                return Err(Error::Layout(format!(
                    "bone ({child},{par}) out of range for {num_joints} joints"
                )));
            }
            if parent[child] != usize::MAX {
                return Err(Error::Layout(format!(
                    "joint {child} appears more than once as a child"
                )));
            }
            parent[child] = par;
        }
        if let Some(missing) = parent.iter().position(|&p| p == usize::MAX) {
            return Err(Error::Layout(format!(
                "joint {missing} never appears as a child"
            )));
        }
        Ok(BonePairList { pairs, parent })
    }

    pub fn num_joints(&self) -> usize {
        self.parent.len()
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn parent_of(&self, child: usize) -> usize {
        self.parent[child]
    }

    /// Undirected adjacency lists of the bone graph (self-loops dropped).
    pub fn adjacency_lists(&self) -> Vec<Vec<usize>> {
        let v = self.num_joints();
        let mut adj = vec![Vec::new(); v];
        for &(c, p) in &self.pairs {
            if c != p {
                adj[c].push(p);
                adj[p].push(c);
            }
        }
        adj
    }

    /// Hop distance from `root` over the undirected bone graph.
    pub fn hop_distances(&self, root: usize) -> Vec<usize> {
        let adj = self.adjacency_lists();
        let mut dist = vec![usize::MAX; self.num_joints()];
        let mut queue = std::collections::VecDeque::new();
        dist[root] = 0;
        queue.push_back(root);
        while let Some(u) = queue.pop_front() {
            for &w in &adj[u] {
                if dist[w] == usize::MAX {
                    dist[w] = dist[u] + 1;
                    queue.push_back(w);
                }
            }
        }
        dist
    }
}

/// The three shipped hypergraph partitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum HypergraphName {
    H1,
    H2,
    H3,
}

impl HypergraphName {
    pub const ALL: [HypergraphName; 3] = [HypergraphName::H1, HypergraphName::H2, HypergraphName::H3];

    pub fn index(self) -> usize {
        match self {
            HypergraphName::H1 => 0,
            HypergraphName::H2 => 1,
            HypergraphName::H3 => 2,
        }
    }
}

impl fmt::Display for HypergraphName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HypergraphName::H1 => write!(f, "h1"),
            HypergraphName::H2 => write!(f, "h2"),
            HypergraphName::H3 => write!(f, "h3"),
        }
    }
}

impl FromStr for HypergraphName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "h1" => Ok(HypergraphName::H1),
            "h2" => Ok(HypergraphName::H2),
            "h3" => Ok(HypergraphName::H3),
            other => Err(Error::Config(format!(
                "unknown hypergraph '{other}' (expected h1, h2 or h3)"
            ))),
        }
    }
}

/// Parse a partition data file: one line per hyperedge, comma-separated
/// joint indices, `#` comments.
pub fn parse_partition_text(text: &str) -> Result<Vec<Vec<usize>>> {
    let mut partition = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut edge = Vec::new();
        for tok in line.split(',') {
            let tok = tok.trim();
            let joint: usize = tok.parse().map_err(|_| Error::Parse {
                line: i + 1,
                msg: format!("invalid joint index '{tok}'"),
            })?;
            edge.push(joint);
        }
        partition.push(edge);
    }
    if partition.is_empty() {
        return Err(Error::Format("partition file has no hyperedges".into()));
    }
    Ok(partition)
}

/// A named skeleton convention: joint count, bones, centering joint, and the
/// h1/h2/h3 partitions.
#[derive(Debug, Clone)]
pub struct SkeletonLayout {
    pub name: String,
    pub num_joints: usize,
    pub bones: BonePairList,
    pub center_joint: usize,
    partitions: Vec<Vec<Vec<usize>>>,
}

/// NTU-style 25-joint bone list, 0-based (child, parent); root is the
/// spine-shoulder joint 20.
pub const NTU25_BONES: [(usize, usize); 25] = [
    (0, 1),
    (1, 20),
    (2, 20),
    (3, 2),
    (4, 20),
    (5, 4),
    (6, 5),
    (7, 6),
    (8, 20),
    (9, 8),
    (10, 9),
    (11, 10),
    (12, 0),
    (13, 12),
    (14, 13),
    (15, 14),
    (16, 0),
    (17, 16),
    (18, 17),
    (19, 18),
    (20, 20),
    (21, 22),
    (22, 7),
    (23, 24),
    (24, 11),
];

/// Spine-middle joint of the NTU convention, used for centering and the
/// distance-ring partition.
pub const NTU25_CENTER: usize = 1;

impl SkeletonLayout {
    pub fn ntu25() -> SkeletonLayout {
        let bones = BonePairList::new(NTU25_BONES.to_vec(), 25).expect("builtin bone list");
        let partitions = vec![
            parse_partition_text(include_str!("../data/ntu25_h1.txt")).expect("builtin h1"),
            parse_partition_text(include_str!("../data/ntu25_h2.txt")).expect("builtin h2"),
            parse_partition_text(include_str!("../data/ntu25_h3.txt")).expect("builtin h3"),
        ];
        SkeletonLayout {
            name: "ntu25".into(),
            num_joints: 25,
            bones,
            center_joint: NTU25_CENTER,
            partitions,
        }
    }

    pub fn by_name(name: &str) -> Result<SkeletonLayout> {
        match name {
            "ntu25" => Ok(SkeletonLayout::ntu25()),
            other => Err(Error::Layout(format!("unknown skeleton layout '{other}'"))),
        }
    }

    pub fn partition(&self, name: HypergraphName) -> &[Vec<usize>] {
        &self.partitions[name.index()]
    }

    /// Replace a partition, e.g. from an override directory.
    pub fn set_partition(&mut self, name: HypergraphName, partition: Vec<Vec<usize>>) {
        self.partitions[name.index()] = partition;
    }

    /// Load `<layout>_<h>.txt` overrides from a directory, when present.
    pub fn load_partition_overrides(&mut self, dir: &Path) -> Result<()> {
        for h in HypergraphName::ALL {
            let path = dir.join(format!("{}_{}.txt", self.name, h));
            if path.exists() {
                let text = std::fs::read_to_string(&path)?;
                self.set_partition(h, parse_partition_text(&text)?);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ntu25_bones_are_a_valid_tree() {
        let layout = SkeletonLayout::ntu25();
        assert_eq!(layout.bones.num_joints(), 25);
        assert_eq!(layout.bones.parent_of(20), 20); // root
        assert_eq!(layout.bones.parent_of(0), 1);
    }

    #[test]
    fn duplicate_child_rejected() {
        let pairs = vec![(0, 1), (0, 1), (1, 1)];
        assert!(BonePairList::new(pairs, 2).is_err());
    }

    #[test]
    fn h3_matches_bfs_rings() {
        // Oracle: recompute the rings by hop distance and compare with the
        // shipped data file.
        let layout = SkeletonLayout::ntu25();
        let dist = layout.bones.hop_distances(layout.center_joint);
        let mut rings = vec![Vec::new(), Vec::new(), Vec::new()];
        for (joint, &d) in dist.iter().enumerate() {
            let ring = if d <= 2 {
                0
            } else if d <= 5 {
                1
            } else {
                2
            };
            rings[ring].push(joint);
        }
        let shipped = layout.partition(HypergraphName::H3);
        for (ring, edge) in rings.iter().zip(shipped) {
            let mut sorted = edge.clone();
            sorted.sort_unstable();
            assert_eq!(ring, &sorted);
        }
    }

    #[test]
    fn partitions_cover_all_joints_once() {
        let layout = SkeletonLayout::ntu25();
        for h in HypergraphName::ALL {
            let mut seen = vec![0usize; 25];
            for edge in layout.partition(h) {
                for &j in edge {
                    seen[j] += 1;
                }
            }
            assert!(seen.iter().all(|&c| c == 1), "{h} is not a partition");
        }
    }

    #[test]
    fn partition_text_parsing() {
        let text = "# comment\n0,1,2\n3 , 4\n";
        let p = parse_partition_text(text).unwrap();
        assert_eq!(p, vec![vec![0, 1, 2], vec![3, 4]]);
        assert!(parse_partition_text("0,x\n").is_err());
        assert!(parse_partition_text("# only comments\n").is_err());
    }
}
