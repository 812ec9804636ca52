use alloc::vec;
use alloc::vec::Vec;

use super::rulebook::{build_rulebook, Rulebook};
use super::spec::ConvSpec;
use crate::error::{Error, Result};
use crate::flops::MacCount;
use crate::linalg::gemm;
use crate::tensor::SparseVoxelTensor;

/// Gather-GEMM-scatter over the rulebook.
///
/// Offsets are processed in order and pairs within an offset by output row,
/// so each output row accumulates its terms in a fixed order.
pub fn apply_conv(input: &SparseVoxelTensor, spec: &ConvSpec, rulebook: &Rulebook) -> Result<SparseVoxelTensor> {
    if spec.in_channels() != input.channels() {
        return Err(Error::ChannelMismatch { expected: spec.in_channels(), actual: input.channels() });
    }
    rulebook.check(input, spec)?;
    let cin = spec.in_channels();
    let cout = spec.out_channels();
    let n_out = rulebook.out_coords().len();
    let mut out = match spec.bias() {
        Some(b) => b.repeat(n_out),
        None => vec![0.0; n_out * cout],
    };
    let mut gathered: Vec<f32> = Vec::new();
    let mut product: Vec<f32> = Vec::new();
    for o in 0..rulebook.offsets().len() {
        let pairs = rulebook.pairs(o);
        if pairs.is_empty() {
            continue;
        }
        gathered.clear();
        for &(i, _) in pairs {
            gathered.extend_from_slice(input.feature(i as usize));
        }
        product.clear();
        product.resize(pairs.len() * cout, 0.0);
        gemm(pairs.len(), cin, cout, &gathered, spec.offset_weights(o), &mut product, false);
        for (&(_, r), row) in pairs.iter().zip(product.chunks_exact(cout)) {
            let dst = &mut out[r as usize * cout..(r as usize + 1) * cout];
            for (d, v) in dst.iter_mut().zip(row) {
                *d += *v;
            }
        }
    }
    Ok(SparseVoxelTensor::from_sorted(rulebook.out_shape(), cout, rulebook.out_coords().to_vec(), out))
}

/// Builds the rulebook, runs the convolution and reports its MACs.
pub fn conv_counted(input: &SparseVoxelTensor, spec: &ConvSpec) -> Result<(SparseVoxelTensor, MacCount)> {
    let rb = build_rulebook(input, spec)?;
    let out = apply_conv(input, spec, &rb)?;
    Ok((out, MacCount::new(rb.macs(spec), spec.dense_macs(input.shape().dims()))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spconv::ConvMode;
    use crate::tensor::GridShape;

    #[test]
    fn identity_kernel_is_identity() {
        let sh = GridShape::new(4, 4, 4).unwrap();
        let t = SparseVoxelTensor::new(sh, 3, vec![[0, 1, 2], [3, 3, 3]], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let spec = ConvSpec::identity(3);
        let rb = build_rulebook(&t, &spec).unwrap();
        assert_eq!(apply_conv(&t, &spec, &rb).unwrap(), t);
    }

    #[test]
    fn empty_input_gives_empty_output() {
        let sh = GridShape::new(4, 4, 4).unwrap();
        let t = SparseVoxelTensor::empty(sh, 2).unwrap();
        let spec = ConvSpec::new([3, 3, 3], [1, 1, 1], 2, 2, ConvMode::Regular, vec![1.0; 108], None).unwrap();
        let (out, macs) = conv_counted(&t, &spec).unwrap();
        assert!(out.is_empty());
        assert_eq!(macs.sparse, 0);
    }

    #[test]
    fn stale_rulebook_detected() {
        let sh = GridShape::new(4, 4, 4).unwrap();
        let a = SparseVoxelTensor::new(sh, 1, vec![[0, 0, 0], [1, 1, 1]], vec![1.0, 1.0]).unwrap();
        let b = SparseVoxelTensor::new(sh, 1, vec![[0, 0, 0]], vec![1.0]).unwrap();
        let spec = ConvSpec::new([3, 3, 3], [1, 1, 1], 1, 1, ConvMode::Regular, vec![1.0; 27], None).unwrap();
        let rb = build_rulebook(&a, &spec).unwrap();
        assert_eq!(apply_conv(&b, &spec, &rb), Err(Error::StaleRulebook));
    }

    #[test]
    fn bias_added_once_per_output() {
        let sh = GridShape::new(3, 1, 1).unwrap();
        let t = SparseVoxelTensor::new(sh, 1, vec![[1, 0, 0]], vec![2.0]).unwrap();
        let spec =
            ConvSpec::new([3, 1, 1], [1, 1, 1], 1, 1, ConvMode::Regular, vec![1.0, 10.0, 100.0], Some(vec![0.5])).unwrap();
        let (out, macs) = conv_counted(&t, &spec).unwrap();
        // Cross-correlation: out[u] = sum_o w[o] * in[u + off_o].
        assert_eq!(out.coords(), &[[0, 0, 0], [1, 0, 0], [2, 0, 0]]);
        assert_eq!(out.features(), &[200.5, 20.5, 2.5]);
        assert_eq!(macs, MacCount::new(3, 7));
    }
}
