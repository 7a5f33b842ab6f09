//! In-memory datasets: preprocessing raw sequences into model-ready
//! modality tensors and assembling batches.

use crate::error::{Error, Result};
use crate::layout::SkeletonLayout;
use crate::modality::{derive, Modality};
use crate::skeleton::{center_sequence, resize_temporal, SkeletonSequence};
use crate::tensor::Tensor;

/// One preprocessed sample: a `(3, T, V, M)` modality tensor plus label.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub label: usize,
    pub data: Tensor,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub num_classes: usize,
    pub modality: Modality,
}

impl Dataset {
    /// Center, resample to `window` frames, and derive the modality stream.
    pub fn from_sequences(
        sequences: &[SkeletonSequence],
        layout: &SkeletonLayout,
        window: usize,
        modality: Modality,
        num_classes: usize,
    ) -> Result<Dataset> {
        if sequences.is_empty() {
            return Err(Error::Config("empty dataset".into()));
        }
        let mut samples = Vec::with_capacity(sequences.len());
        for seq in sequences {
            if seq.label as usize >= num_classes {
                return Err(Error::Config(format!(
                    "sample {} has label {} outside the {num_classes} classes",
                    seq.sample_id, seq.label
                )));
            }
            let centered = center_sequence(seq, layout.center_joint);
            let resized = resize_temporal(&centered, window)?;
            let stream = derive(&resized, &layout.bones, modality)?;
            samples.push(Sample {
                id: seq.sample_id.clone(),
                label: seq.label as usize,
                data: stream.data,
            });
        }
        Ok(Dataset {
            samples,
            num_classes,
            modality,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Stack the given samples into a `(B, 3, T, V, M)` batch.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let first = &self.samples[indices[0]].data;
        let (c, t, v, m) = (
            first.shape()[0],
            first.shape()[1],
            first.shape()[2],
            first.shape()[3],
        );
        let per = c * t * v * m;
        let mut data = Tensor::zeros(&[indices.len(), c, t, v, m]);
        let mut labels = Vec::with_capacity(indices.len());
        for (row, &ix) in indices.iter().enumerate() {
            let s = &self.samples[ix];
            data.data_mut()[row * per..(row + 1) * per].copy_from_slice(s.data.data());
            labels.push(s.label);
        }
        (data, labels)
    }

    /// Highest label + 1 in a sequence list.
    pub fn infer_classes(sequences: &[SkeletonSequence]) -> usize {
        sequences.iter().map(|s| s.label as usize + 1).max().unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::synth::{synth_dataset, SynthSpec};

    #[test]
    fn preprocessing_produces_model_shapes() {
        let layout = SkeletonLayout::ntu25();
        let seqs = synth_dataset(
            &SynthSpec {
                classes: 2,
                per_class: 2,
                frames: 10,
                noise: 0.0,
                seed: 1,
            },
            &layout,
        )
        .unwrap();
        for modality in Modality::ALL {
            let ds = Dataset::from_sequences(&seqs, &layout, 16, modality, 2).unwrap();
            assert_eq!(ds.len(), 4);
            assert_eq!(ds.samples[0].data.shape(), &[3, 16, 25, 1]);
            let (batch, labels) = ds.batch(&[0, 3]);
            assert_eq!(batch.shape(), &[2, 3, 16, 25, 1]);
            assert_eq!(labels, vec![0, 1]);
        }
    }

    #[test]
    fn label_outside_class_range_rejected() {
        let layout = SkeletonLayout::ntu25();
        let seqs = synth_dataset(
            &SynthSpec {
                classes: 3,
                per_class: 1,
                frames: 8,
                noise: 0.0,
                seed: 2,
            },
            &layout,
        )
        .unwrap();
        assert!(Dataset::from_sequences(&seqs, &layout, 8, Modality::Joint, 2).is_err());
    }
}
