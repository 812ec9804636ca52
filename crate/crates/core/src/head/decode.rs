use alloc::vec::Vec;

use super::filter::FilteredScale;
use super::QuerySet;
use crate::error::{Error, Result};
use crate::init::ParamRng;
use crate::linalg::{gemm, Matrix};
use crate::tensor::{Coord, GridShape};

/// Linear classifier from query width to `classes + 1` logits; the last slot is "no object".
#[derive(Debug, Clone, PartialEq)]
pub struct ClassHead {
    pub weights: Matrix,
    pub bias: Vec<f32>,
}

impl ClassHead {
    pub fn seeded(width: usize, classes: usize, rng: &mut ParamRng) -> Self {
        let w = rng.fan_in_uniform(width * (classes + 1), width);
        Self { weights: Matrix::from_vec(width, classes + 1, w).expect("sized"), bias: alloc::vec![0.0; classes + 1] }
    }

    pub fn slots(&self) -> usize {
        self.weights.cols()
    }
}

/// Masks and class logits decoded from one query set.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPrediction {
    /// `N_q x N_l` mask logits at the kept voxels.
    pub occ_masks: Matrix,
    /// Mask logit every query assigns to all empty voxels.
    pub empty_mask: Vec<f32>,
    /// `N_q x (classes + 1)`.
    pub class_logits: Matrix,
    /// Kept voxel coordinates, one per `occ_masks` column.
    pub coords: Vec<Coord>,
    pub shape: GridShape,
}

impl MaskPrediction {
    pub fn num_queries(&self) -> usize {
        self.occ_masks.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.class_logits.cols() - 1
    }
}

/// Mask MACs are `N_l N_q C + N_q C`; classifier MACs `N_q C (classes + 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DecodeMacs {
    pub mask: u64,
    pub classify: u64,
}

/// Outer products of the queries with the kept features and the empty token.
pub fn decode_queries(q: &QuerySet, filtered: &FilteredScale, class_head: &ClassHead) -> Result<(MaskPrediction, DecodeMacs)> {
    let c = q.width();
    if filtered.kept.channels() != c || filtered.empty_token.len() != c {
        return Err(Error::ChannelMismatch { expected: c, actual: filtered.kept.channels() });
    }
    if class_head.weights.rows() != c {
        return Err(Error::ChannelMismatch { expected: c, actual: class_head.weights.rows() });
    }
    let n_q = q.len();
    let n_l = filtered.kept.len();
    let feats = Matrix::from_vec(n_l, c, filtered.kept.features().to_vec())?;
    let occ_masks = q.matrix().matmul_t(&feats);
    let token = Matrix::from_vec(1, c, filtered.empty_token.clone())?;
    let empty_mask = q.matrix().matmul_t(&token).into_vec();
    let slots = class_head.slots();
    let mut logits = class_head.bias.repeat(n_q);
    gemm(n_q, c, slots, q.matrix().as_slice(), class_head.weights.as_slice(), &mut logits, true);
    let class_logits = Matrix::from_vec(n_q, slots, logits)?;
    let macs = DecodeMacs {
        mask: (n_l * n_q * c + n_q * c) as u64,
        classify: (n_q * c * slots) as u64,
    };
    let pred = MaskPrediction {
        occ_masks,
        empty_mask,
        class_logits,
        coords: filtered.kept.coords().to_vec(),
        shape: filtered.kept.shape(),
    };
    Ok((pred, macs))
}

/// Dense `N_q x H x W x D` mask logits.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMaskStack {
    pub num_queries: usize,
    pub shape: GridShape,
    /// Query-major: `values[q * volume + linear(v)]`.
    pub values: Vec<f32>,
}

impl DenseMaskStack {
    pub fn query(&self, q: usize) -> &[f32] {
        let v = self.shape.volume();
        &self.values[q * v..(q + 1) * v]
    }

    pub fn at(&self, q: usize, c: Coord) -> f32 {
        self.values[q * self.shape.volume() + self.shape.linear(c)]
    }
}

/// Fills each query's volume with its empty-mask value, then scatters the
/// kept-voxel mask values. No arithmetic happens here.
pub fn reconstruct_dense_mask(pred: &MaskPrediction, shape: GridShape) -> Result<DenseMaskStack> {
    if let Some(&coord) = pred.coords.iter().find(|c| !shape.contains(**c)) {
        return Err(Error::CoordOutOfBounds { coord, shape });
    }
    let vol = shape.volume();
    let n_q = pred.num_queries();
    let mut values = Vec::with_capacity(n_q * vol);
    for q in 0..n_q {
        let start = values.len();
        values.resize(start + vol, pred.empty_mask[q]);
        let dst = &mut values[start..];
        for (i, &c) in pred.coords.iter().enumerate() {
            dst[shape.linear(c)] = pred.occ_masks.get(q, i);
        }
    }
    Ok(DenseMaskStack { num_queries: n_q, shape, values })
}
