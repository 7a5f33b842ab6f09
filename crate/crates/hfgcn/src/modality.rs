//! The four input modalities: joint, bone, joint motion, bone motion.

use crate::error::{Error, Result};
use crate::layout::BonePairList;
use crate::skeleton::SkeletonSequence;
use crate::tensor::Tensor;
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Joint,
    Bone,
    JointMotion,
    BoneMotion,
}

impl Modality {
    pub const ALL: [Modality; 4] = [
        Modality::Joint,
        Modality::Bone,
        Modality::JointMotion,
        Modality::BoneMotion,
    ];
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Modality::Joint => "joint",
            Modality::Bone => "bone",
            Modality::JointMotion => "jmotion",
            Modality::BoneMotion => "bmotion",
        };
        write!(f, "{s}")
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "joint" => Ok(Modality::Joint),
            "bone" => Ok(Modality::Bone),
            "jmotion" => Ok(Modality::JointMotion),
            "bmotion" => Ok(Modality::BoneMotion),
            other => Err(Error::Config(format!(
                "unknown modality '{other}' (expected joint|bone|jmotion|bmotion)"
            ))),
        }
    }
}

/// One derived input stream of shape `(3, T, V, M)` in f64.
#[derive(Debug, Clone)]
pub struct ModalityTensor {
    pub modality: Modality,
    pub data: Tensor,
}

impl ModalityTensor {
    fn dims(&self) -> (usize, usize, usize, usize) {
        let s = self.data.shape();
        (s[0], s[1], s[2], s[3])
    }
}

/// Reorder `(M, T, V, 3)` storage into the model's `(3, T, V, M)` tensor.
pub fn joint_tensor(seq: &SkeletonSequence) -> ModalityTensor {
    let (m, t, v) = (seq.num_persons, seq.num_frames, seq.num_joints);
    let mut data = Tensor::zeros(&[3, t, v, m]);
    let d = data.data_mut();
    for mi in 0..m {
        for ti in 0..t {
            for vi in 0..v {
                for axis in 0..3 {
                    d[((axis * t + ti) * v + vi) * m + mi] =
                        seq.at(mi, ti, vi, axis) as f64;
                }
            }
        }
    }
    ModalityTensor {
        modality: Modality::Joint,
        data,
    }
}

/// `bone[c,t,v,m] = joint[c,t,child(v),m] - joint[c,t,parent(v),m]`; bones
/// are indexed by their child joint, so the root bone is identically zero.
pub fn derive_bone(joint: &ModalityTensor, bones: &BonePairList) -> Result<ModalityTensor> {
    if joint.modality != Modality::Joint {
        return Err(Error::Config(
            "bone stream must be derived from the joint stream".into(),
        ));
    }
    let (c, t, v, m) = joint.dims();
    if v != bones.num_joints() {
        return Err(Error::Shape(format!(
            "joint tensor has {v} joints, bone list expects {}",
            bones.num_joints()
        )));
    }
    let mut out = Tensor::zeros(joint.data.shape());
    let src = joint.data.data();
    let dst = out.data_mut();
    for ci in 0..c {
        for ti in 0..t {
            for vi in 0..v {
                let parent = bones.parent_of(vi);
                let child_off = ((ci * t + ti) * v + vi) * m;
                let parent_off = ((ci * t + ti) * v + parent) * m;
                for mi in 0..m {
                    dst[child_off + mi] = src[child_off + mi] - src[parent_off + mi];
                }
            }
        }
    }
    Ok(ModalityTensor {
        modality: Modality::Bone,
        data: out,
    })
}

/// Forward temporal difference with a zero final frame, so all modalities
/// share the same T.
pub fn derive_motion(x: &ModalityTensor) -> Result<ModalityTensor> {
    let modality = match x.modality {
        Modality::Joint => Modality::JointMotion,
        Modality::Bone => Modality::BoneMotion,
        other => {
            return Err(Error::Config(format!(
                "cannot derive motion from the {other} stream"
            )))
        }
    };
    let (c, t, v, m) = x.dims();
    if t < 2 {
        return Err(Error::Shape(format!(
            "motion stream needs at least 2 frames, got {t}"
        )));
    }
    let mut out = Tensor::zeros(x.data.shape());
    let src = x.data.data();
    let dst = out.data_mut();
    let vm = v * m;
    for ci in 0..c {
        for ti in 0..t - 1 {
            let cur = (ci * t + ti) * vm;
            let next = (ci * t + ti + 1) * vm;
            for k in 0..vm {
                dst[cur + k] = src[next + k] - src[cur + k];
            }
        }
        // final frame stays zero
    }
    Ok(ModalityTensor { modality, data: out })
}

/// Derive any of the four streams from a (preprocessed) joint sequence.
pub fn derive(seq: &SkeletonSequence, bones: &BonePairList, modality: Modality) -> Result<ModalityTensor> {
    let joint = joint_tensor(seq);
    match modality {
        Modality::Joint => Ok(joint),
        Modality::Bone => derive_bone(&joint, bones),
        Modality::JointMotion => derive_motion(&joint),
        Modality::BoneMotion => derive_motion(&derive_bone(&joint, bones)?),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::SkeletonLayout;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_seq(t: usize) -> SkeletonSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut seq = SkeletonSequence::zeros("r", 0, 2, t, 25);
        for m in 0..2 {
            for ti in 0..t {
                for v in 0..25 {
                    for a in 0..3 {
                        seq.set(m, ti, v, a, rng.gen_range(-1.0..1.0));
                    }
                }
            }
        }
        seq
    }

    #[test]
    fn constant_skeleton_has_zero_bones() {
        let layout = SkeletonLayout::ntu25();
        let mut seq = SkeletonSequence::zeros("c", 0, 1, 2, 25);
        for t in 0..2 {
            for v in 0..25 {
                seq.set(0, t, v, 0, 1.5);
                seq.set(0, t, v, 1, -0.5);
                seq.set(0, t, v, 2, 4.0);
            }
        }
        let joint = joint_tensor(&seq);
        let bone = derive_bone(&joint, &layout.bones).unwrap();
        assert!(bone.data.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bone_is_child_minus_parent() {
        let layout = SkeletonLayout::ntu25();
        let mut seq = SkeletonSequence::zeros("b", 0, 1, 1, 25);
        // child joint 0 at (1,2,3), its parent (joint 1) at (1,1,1)
        seq.set(0, 0, 0, 0, 1.0);
        seq.set(0, 0, 0, 1, 2.0);
        seq.set(0, 0, 0, 2, 3.0);
        seq.set(0, 0, 1, 0, 1.0);
        seq.set(0, 0, 1, 1, 1.0);
        seq.set(0, 0, 1, 2, 1.0);
        let bone = derive_bone(&joint_tensor(&seq), &layout.bones).unwrap();
        assert_eq!(bone.data.at(&[0, 0, 0, 0]), 0.0);
        assert_eq!(bone.data.at(&[1, 0, 0, 0]), 1.0);
        assert_eq!(bone.data.at(&[2, 0, 0, 0]), 2.0);
    }

    #[test]
    fn bone_matches_elementwise_oracle_on_random_input() {
        let layout = SkeletonLayout::ntu25();
        let seq = random_seq(4);
        let joint = joint_tensor(&seq);
        let bone = derive_bone(&joint, &layout.bones).unwrap();
        for c in 0..3 {
            for t in 0..4 {
                for v in 0..25 {
                    for m in 0..2 {
                        let expect = joint.data.at(&[c, t, v, m])
                            - joint.data.at(&[c, t, layout.bones.parent_of(v), m]);
                        assert_eq!(bone.data.at(&[c, t, v, m]), expect);
                    }
                }
            }
        }
    }

    #[test]
    fn bone_chains_telescope_back_to_relative_position() {
        let layout = SkeletonLayout::ntu25();
        let seq = random_seq(2);
        let joint = joint_tensor(&seq);
        let bone = derive_bone(&joint, &layout.bones).unwrap();
        // Summing bones from each joint up to the root reconstructs the
        // joint position relative to the root.
        let root = 20;
        for v in 0..25 {
            for c in 0..3 {
                let mut acc = 0.0;
                let mut cur = v;
                while cur != root {
                    acc += bone.data.at(&[c, 0, cur, 0]);
                    cur = layout.bones.parent_of(cur);
                }
                let expect = joint.data.at(&[c, 0, v, 0]) - joint.data.at(&[c, 0, root, 0]);
                assert!((acc - expect).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn motion_of_constant_sequence_is_zero() {
        let mut seq = SkeletonSequence::zeros("m", 0, 1, 5, 25);
        for t in 0..5 {
            for v in 0..25 {
                seq.set(0, t, v, 0, 2.0);
            }
        }
        let motion = derive_motion(&joint_tensor(&seq)).unwrap();
        assert!(motion.data.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn motion_is_forward_difference_with_zero_tail() {
        let mut seq = SkeletonSequence::zeros("m", 0, 1, 3, 25);
        for (t, val) in [0.0f32, 2.0, 5.0].iter().enumerate() {
            seq.set(0, t, 0, 0, *val);
        }
        let motion = derive_motion(&joint_tensor(&seq)).unwrap();
        let got: Vec<f64> = (0..3).map(|t| motion.data.at(&[0, t, 0, 0])).collect();
        assert_eq!(got, vec![2.0, 3.0, 0.0]);
    }

    #[test]
    fn motion_matches_oracle_on_random_input() {
        let seq = random_seq(6);
        let joint = joint_tensor(&seq);
        let motion = derive_motion(&joint).unwrap();
        for c in 0..3 {
            for t in 0..6 {
                for v in 0..25 {
                    for m in 0..2 {
                        let expect = if t + 1 < 6 {
                            joint.data.at(&[c, t + 1, v, m]) - joint.data.at(&[c, t, v, m])
                        } else {
                            0.0
                        };
                        assert_eq!(motion.data.at(&[c, t, v, m]), expect);
                    }
                }
            }
        }
    }

    #[test]
    fn motion_needs_two_frames() {
        let seq = SkeletonSequence::zeros("m", 0, 1, 1, 25);
        assert!(derive_motion(&joint_tensor(&seq)).is_err());
    }
}
