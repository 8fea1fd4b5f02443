use std::sync::Arc;

use ndarray::Array4;

use super::topology::SkeletonTopology;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One skeleton clip: coordinates laid out as (C, T, V, M).
#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonSequence {
    coords: Array4<f32>,
    topology: Arc<SkeletonTopology>,
    label: Option<usize>,
}

impl SkeletonSequence {
    pub fn new(coords: Array4<f32>, topology: Arc<SkeletonTopology>, label: Option<usize>) -> Result<Self> {
        let v = coords.dim().2;
        if v != topology.joint_count() {
            return Err(Error::ShapeMismatch(format!(
                "sequence has {v} joints, topology `{}` has {}",
                topology.name(),
                topology.joint_count()
            )));
        }
        if !coords.iter().all(|x| x.is_finite()) {
            return Err(Error::OutOfRange("non-finite skeleton coordinate".into()));
        }
        Ok(Self { coords, topology, label })
    }

    pub fn coords(&self) -> &Array4<f32> {
        &self.coords
    }

    pub fn topology(&self) -> &Arc<SkeletonTopology> {
        &self.topology
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }

    /// (C, T, V, M)
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        self.coords.dim()
    }

    pub fn frames(&self) -> usize {
        self.coords.dim().1
    }

    /// Same topology and label, new coordinates. Callers guarantee V is kept.
    pub(crate) fn with_coords(&self, coords: Array4<f32>) -> Self {
        debug_assert_eq!(coords.dim().2, self.coords.dim().2);
        Self { coords, topology: self.topology.clone(), label: self.label }
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::from_array(self.coords.clone().into_dyn())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// A labelled (or unlabelled) collection of equally shaped sequences.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<SkeletonSequence>,
    pub class_count: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(samples: Vec<SkeletonSequence>, class_count: usize, split: Split) -> Result<Self> {
        if let Some(first) = samples.first() {
            let dims = first.dims();
            for (i, s) in samples.iter().enumerate() {
                if s.dims() != dims {
                    return Err(Error::ShapeMismatch(format!(
                        "sample {i} has shape {:?}, sample 0 has {dims:?}",
                        s.dims()
                    )));
                }
                if let Some(l) = s.label() {
                    if l >= class_count {
                        return Err(Error::OutOfRange(format!(
                            "sample {i} label {l} outside [0, {class_count})"
                        )));
                    }
                }
            }
        }
        Ok(Self { samples, class_count, split })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn topology(&self) -> Option<&Arc<SkeletonTopology>> {
        self.samples.first().map(|s| s.topology())
    }

    /// Labels of every sample, failing on the first unlabelled one.
    pub fn labels(&self) -> Result<Vec<usize>> {
        self.samples
            .iter()
            .enumerate()
            .map(|(i, s)| s.label().ok_or_else(|| Error::InvalidConfig(format!("sample {i} is unlabelled"))))
            .collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            class_count: self.class_count,
            split: self.split,
        }
    }
}
