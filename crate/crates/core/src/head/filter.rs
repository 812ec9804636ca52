use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::init::ParamRng;
use crate::linalg::{dot, sigmoid};
use crate::tensor::{Coord, SparseVoxelTensor};

/// Per-voxel linear empty/non-empty classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryClassifier {
    pub weights: Vec<f32>,
    pub bias: f32,
}

impl BinaryClassifier {
    pub fn seeded(width: usize, rng: &mut ParamRng) -> Self {
        Self { weights: rng.fan_in_uniform(width, width), bias: 0.0 }
    }

    pub fn logit(&self, f: &[f32]) -> f32 {
        dot(&self.weights, f) + self.bias
    }
}

/// A scale after binary filtering.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredScale {
    /// Voxels classified non-empty.
    pub kept: SparseVoxelTensor,
    /// Every pre-filter voxel, aligned with `binary_logits`.
    pub candidates: Vec<Coord>,
    pub binary_logits: Vec<f32>,
    /// Stand-in feature for every empty voxel.
    pub empty_token: Vec<f32>,
}

impl FilteredScale {
    pub fn kept_len(&self) -> usize {
        self.kept.len()
    }
}

/// Keeps voxels with `sigmoid(logit) >= threshold`.
pub fn occupancy_filter(
    scale: &SparseVoxelTensor,
    classifier: &BinaryClassifier,
    empty_token: &[f32],
    threshold: f32,
) -> Result<FilteredScale> {
    if classifier.weights.len() != scale.channels() {
        return Err(Error::ChannelMismatch { expected: scale.channels(), actual: classifier.weights.len() });
    }
    if empty_token.len() != scale.channels() {
        return Err(Error::ChannelMismatch { expected: scale.channels(), actual: empty_token.len() });
    }
    let logits: Vec<f32> = (0..scale.len()).map(|r| classifier.logit(scale.feature(r))).collect();
    let kept = scale.filter_rows(|r| sigmoid(logits[r]) >= threshold);
    Ok(FilteredScale {
        kept,
        candidates: scale.coords().to_vec(),
        binary_logits: logits,
        empty_token: empty_token.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::GridShape;
    use alloc::vec;

    fn scale() -> SparseVoxelTensor {
        let sh = GridShape::new(4, 4, 2).unwrap();
        SparseVoxelTensor::new(sh, 2, vec![[0, 0, 0], [1, 2, 1], [3, 3, 0]], vec![1.0, 0.0, -1.0, 0.5, 0.2, 0.2]).unwrap()
    }

    #[test]
    fn bias_extremes() {
        let s = scale();
        let keep_all = BinaryClassifier { weights: vec![1.0, 1.0], bias: 100.0 };
        let f = occupancy_filter(&s, &keep_all, &[0.0, 0.0], 0.5).unwrap();
        assert_eq!(f.kept, s);
        let drop_all = BinaryClassifier { weights: vec![1.0, 1.0], bias: -100.0 };
        let f = occupancy_filter(&s, &drop_all, &[0.0, 0.0], 0.5).unwrap();
        assert!(f.kept.is_empty());
        assert_eq!(f.candidates.len(), 3);
    }

    #[test]
    fn per_voxel_decision() {
        let s = scale();
        let c = BinaryClassifier { weights: vec![1.0, 2.0], bias: 0.0 };
        let f = occupancy_filter(&s, &c, &[0.0, 0.0], 0.5).unwrap();
        // logits 1.0, 0.0, 0.6: sigmoid(0) = 0.5 is kept.
        assert_eq!(f.binary_logits, vec![1.0, 0.0, 0.6f32]);
        assert_eq!(f.kept.len(), 3);
        let f = occupancy_filter(&s, &c, &[0.0, 0.0], 0.6).unwrap();
        assert_eq!(f.kept.coords(), &[[0, 0, 0], [3, 3, 0]]);
    }

    #[test]
    fn width_checked() {
        let c = BinaryClassifier { weights: vec![1.0], bias: 0.0 };
        assert!(occupancy_filter(&scale(), &c, &[0.0, 0.0], 0.5).is_err());
    }
}
