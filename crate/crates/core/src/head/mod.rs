//! Sparse mask-transformer occupancy head.
//!
//! Per layer: a linear binary classifier drops voxels predicted empty, the
//! queries cross-attend to the layer's scale (empty voxels represented by a
//! single token), and the queries are decoded into masks over the kept voxels
//! of the finest scale plus one mask value shared by every empty voxel.
//! The previous layer's masks, max-pooled to the next scale, gate attention.

mod assemble;
mod attention;
mod decode;
mod filter;
mod run;

pub use assemble::{assemble_occupancy, assembly_macs, OccupancyGrid};
pub use attention::{attention_weights, make_attention_mask, update_queries, AttentionMask, AttentionParams};
pub use decode::{decode_queries, reconstruct_dense_mask, ClassHead, DenseMaskStack, MaskPrediction};
pub use filter::{occupancy_filter, BinaryClassifier, FilteredScale};
pub use run::{layer_schedule, run_head, run_head_probed, HeadConfig, HeadOutput, HeadParams};

use crate::linalg::Matrix;

/// Object queries, one row per query.
#[derive(Debug, Clone, PartialEq)]
pub struct QuerySet(pub Matrix);

impl QuerySet {
    pub fn new(queries: Matrix) -> Self {
        Self(queries)
    }

    pub fn len(&self) -> usize {
        self.0.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.rows() == 0
    }

    pub fn width(&self) -> usize {
        self.0.cols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.as_slice().iter().all(|v| v.is_finite())
    }
}
