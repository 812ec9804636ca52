//! Sparse latent-space building blocks for voxel occupancy prediction.
//!
//! Everything here is pure computation over coordinate-format (COO) voxel
//! tensors and runs without `std`; only `alloc` is required. File formats,
//! timing and the command line live in the `sparseocc-bench` crate.
//!
//! Layout:
//! - [`tensor`]: bounded grids, sparse tensors, dense volumes, sparsify/densify
//! - [`spconv`]: rulebooks, regular/submanifold convolution, diffuser blocks
//! - [`pyramid`]: multi-scale sparse pyramid and interpolation fusion
//! - [`head`]: sparse mask-transformer occupancy head
//! - [`matching`]: Hungarian assignment and forward losses
//! - [`oracle`]: slow dense reference implementations
//! - [`flops`]: multiply-accumulate ledger
//! - [`pipeline`]: seeded end-to-end model

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod error;
pub mod flops;
pub mod head;
pub mod init;
pub mod linalg;
pub mod matching;
pub mod oracle;
pub mod pipeline;
pub mod pyramid;
pub mod spconv;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{densify, densify_with_fill, sparsify, sparsify_nonzero, Coord, DenseVolume, GridShape, SparseVoxelTensor};
