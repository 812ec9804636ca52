use alloc::vec;
use alloc::vec::Vec;

use super::spec::{ConvMode, ConvSpec};
use crate::error::{Error, Result};
use crate::tensor::{Coord, CoordIndex, GridShape, SparseVoxelTensor};

/// Execution plan of one sparse convolution on one input tensor.
///
/// `pairs[o]` lists `(input_row, output_row)` for kernel offset `o`, sorted by
/// output row. Output coordinates are in canonical order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rulebook {
    offsets: Vec<[i32; 3]>,
    pairs: Vec<Vec<(u32, u32)>>,
    out_coords: Vec<Coord>,
    out_shape: GridShape,
    in_len: usize,
}

impl Rulebook {
    pub fn offsets(&self) -> &[[i32; 3]] {
        &self.offsets
    }

    pub fn pairs(&self, offset: usize) -> &[(u32, u32)] {
        &self.pairs[offset]
    }

    pub fn out_coords(&self) -> &[Coord] {
        &self.out_coords
    }

    pub fn out_shape(&self) -> GridShape {
        self.out_shape
    }

    pub fn in_len(&self) -> usize {
        self.in_len
    }

    pub fn pair_count(&self) -> usize {
        self.pairs.iter().map(Vec::len).sum()
    }

    /// Executed MACs: one `C_in x C_out` product per pair.
    pub fn macs(&self, spec: &ConvSpec) -> u64 {
        self.pair_count() as u64 * (spec.in_channels() * spec.out_channels()) as u64
    }

    pub(crate) fn check(&self, input: &SparseVoxelTensor, spec: &ConvSpec) -> Result<()> {
        if self.offsets.len() != spec.kernel_volume() || self.in_len != input.len() {
            return Err(Error::StaleRulebook);
        }
        let n_out = self.out_coords.len() as u32;
        let n_in = input.len() as u32;
        if self.pairs.iter().flatten().any(|&(i, o)| i >= n_in || o >= n_out) {
            return Err(Error::StaleRulebook);
        }
        Ok(())
    }
}

pub fn build_rulebook(input: &SparseVoxelTensor, spec: &ConvSpec) -> Result<Rulebook> {
    if spec.in_channels() != input.channels() {
        return Err(Error::ChannelMismatch { expected: spec.in_channels(), actual: input.channels() });
    }
    let offsets = spec.offsets();
    let in_shape = input.shape();
    match spec.mode() {
        ConvMode::Submanifold => {
            let mut pairs = vec![Vec::new(); offsets.len()];
            for (o, &off) in offsets.iter().enumerate() {
                for (out_row, &p) in input.coords().iter().enumerate() {
                    if let Some(src) = in_shape.offset(p, off).and_then(|q| input.row_of(q)) {
                        pairs[o].push((src as u32, out_row as u32));
                    }
                }
            }
            Ok(Rulebook { offsets, pairs, out_coords: input.coords().to_vec(), out_shape: in_shape, in_len: input.len() })
        }
        ConvMode::Regular => {
            let stride = spec.stride();
            let out_shape = in_shape.strided(stride);
            let out_dims = out_shape.dims();
            // (offset, input_row, output coord) for every contributing tap.
            let mut taps: Vec<(u32, u32, Coord)> = Vec::new();
            for (in_row, &p) in input.coords().iter().enumerate() {
                'offsets: for (o, off) in offsets.iter().enumerate() {
                    let mut u = [0u32; 3];
                    for a in 0..3 {
                        let num = p[a] as i64 - off[a] as i64;
                        let s = stride[a] as i64;
                        if num < 0 || num % s != 0 || num / s >= out_dims[a] as i64 {
                            continue 'offsets;
                        }
                        u[a] = (num / s) as u32;
                    }
                    taps.push((o as u32, in_row as u32, u));
                }
            }
            let mut out_coords: Vec<Coord> = taps.iter().map(|t| t.2).collect();
            out_coords.sort_unstable();
            out_coords.dedup();
            let mut index = CoordIndex::with_capacity(out_coords.len());
            for (row, &c) in out_coords.iter().enumerate() {
                index.insert(c, row as u32);
            }
            let mut pairs = vec![Vec::new(); offsets.len()];
            for (o, in_row, u) in taps {
                let out_row = index.get(u).expect("output coordinate was collected");
                pairs[o as usize].push((in_row, out_row));
            }
            for list in &mut pairs {
                list.sort_unstable_by_key(|&(_, out_row)| out_row);
            }
            Ok(Rulebook { offsets, pairs, out_coords, out_shape, in_len: input.len() })
        }
    }
}
