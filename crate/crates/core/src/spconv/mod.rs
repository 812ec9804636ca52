//! Rulebook-driven sparse convolution.
//!
//! A convolution runs in two phases: [`build_rulebook`] works out the output
//! active set and the `(input_row, output_row)` pairs for every kernel offset,
//! then [`apply_conv`] executes gather-GEMM-scatter over those pairs. The
//! convention is cross-correlation with implicit zero padding of
//! `(k - 1) / 2` per axis, so stride-1 convolutions keep the grid size.

mod blocks;
mod conv;
mod rulebook;
mod spec;

pub use blocks::{
    aggregation_block, aggregation_block_flat, completion_block, completion_block_flat, downsample, downsample_counted,
    Activation,
    AggregationBlock, CompletionBlock, DEFAULT_LEAKY_SLOPE,
};
pub use conv::{apply_conv, conv_counted};
pub use rulebook::{build_rulebook, Rulebook};
pub use spec::{ConvMode, ConvSpec};
