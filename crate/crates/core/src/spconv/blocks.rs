//! Diffuser building blocks and strided downsampling.
//!
//! The completion block factors a `k x k x k` regular convolution into
//! `(k,k,1) -> (k,1,k) -> (1,k,k)`, each rebuilt on the previous layer's
//! active set. The aggregation block runs two submanifold branches,
//! `(1,k,k) -> (k,1,k)` and `(k,1,k) -> (1,k,k)`, and sums them. Flat (2D)
//! scales use a single `3x3x1` completion layer and two parallel `5x5x1`
//! submanifold layers.

use alloc::vec::Vec;

use super::conv::conv_counted;
use super::spec::{ConvMode, ConvSpec};
use crate::error::{Error, Result};
use crate::flops::MacCount;
use crate::init::ParamRng;
use crate::tensor::SparseVoxelTensor;

pub const DEFAULT_LEAKY_SLOPE: f32 = 0.01;

/// Nonlinearity applied after every block layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    /// Pure linear mode, used by the oracle comparisons.
    Identity,
    LeakyRelu(f32),
}

impl Default for Activation {
    fn default() -> Self {
        Activation::LeakyRelu(DEFAULT_LEAKY_SLOPE)
    }
}

impl Activation {
    pub fn apply(&self, x: f32) -> f32 {
        match *self {
            Activation::Identity => x,
            Activation::LeakyRelu(slope) => {
                if x >= 0.0 {
                    x
                } else {
                    slope * x
                }
            }
        }
    }

    fn apply_tensor(&self, t: SparseVoxelTensor) -> SparseVoxelTensor {
        if *self == Activation::Identity {
            return t;
        }
        let f = t.features().iter().map(|&v| self.apply(v)).collect();
        t.with_features(t.channels(), f).expect("same shape")
    }
}

fn layer(input: &SparseVoxelTensor, spec: &ConvSpec, act: Activation, macs: &mut MacCount) -> Result<SparseVoxelTensor> {
    let (out, m) = conv_counted(input, spec)?;
    *macs += m;
    Ok(act.apply_tensor(out))
}

fn check_layer(spec: &ConvSpec, mode: ConvMode, kernel: [usize; 3], what: &'static str) -> Result<()> {
    if spec.mode() != mode || spec.stride() != [1, 1, 1] || spec.kernel() != kernel {
        return Err(Error::BlockSpec(what));
    }
    Ok(())
}

fn check_chain(specs: &[&ConvSpec]) -> Result<()> {
    if specs.windows(2).any(|w| w[0].out_channels() != w[1].in_channels()) {
        return Err(Error::BlockSpec("channel chain does not match"));
    }
    Ok(())
}

/// Sparse completion block: one regular convolution, factored into planar layers.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletionBlock {
    layers: Vec<ConvSpec>,
}

impl CompletionBlock {
    /// Three planar layers `(k,k,1), (k,1,k), (1,k,k)`.
    pub fn new(layers: [ConvSpec; 3]) -> Result<Self> {
        let k = layers[0].kernel()[0];
        check_layer(&layers[0], ConvMode::Regular, [k, k, 1], "completion layer 1 must be regular (k,k,1)")?;
        check_layer(&layers[1], ConvMode::Regular, [k, 1, k], "completion layer 2 must be regular (k,1,k)")?;
        check_layer(&layers[2], ConvMode::Regular, [1, k, k], "completion layer 3 must be regular (1,k,k)")?;
        check_chain(&[&layers[0], &layers[1], &layers[2]])?;
        Ok(Self { layers: layers.into() })
    }

    /// Single `(k,k,1)` regular layer for a flat scale.
    pub fn flat(layer: ConvSpec) -> Result<Self> {
        let k = layer.kernel()[0];
        check_layer(&layer, ConvMode::Regular, [k, k, 1], "flat completion layer must be regular (k,k,1)")?;
        Ok(Self { layers: alloc::vec![layer] })
    }

    pub fn seeded(k: usize, cin: usize, cout: usize, rng: &mut ParamRng) -> Result<Self> {
        let one = [1, 1, 1];
        Self::new([
            ConvSpec::seeded([k, k, 1], one, cin, cout, ConvMode::Regular, rng)?,
            ConvSpec::seeded([k, 1, k], one, cout, cout, ConvMode::Regular, rng)?,
            ConvSpec::seeded([1, k, k], one, cout, cout, ConvMode::Regular, rng)?,
        ])
    }

    pub fn seeded_flat(k: usize, cin: usize, cout: usize, rng: &mut ParamRng) -> Result<Self> {
        Self::flat(ConvSpec::seeded([k, k, 1], [1, 1, 1], cin, cout, ConvMode::Regular, rng)?)
    }

    pub fn layers(&self) -> &[ConvSpec] {
        &self.layers
    }

    pub fn out_channels(&self) -> usize {
        self.layers.last().map(ConvSpec::out_channels).unwrap_or(0)
    }

    pub fn forward(&self, input: &SparseVoxelTensor, act: Activation, macs: &mut MacCount) -> Result<SparseVoxelTensor> {
        let mut x = layer(input, &self.layers[0], act, macs)?;
        for spec in &self.layers[1..] {
            x = layer(&x, spec, act, macs)?;
        }
        Ok(x)
    }
}

/// Contextual aggregation block: two summed submanifold branches.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationBlock {
    branch_a: Vec<ConvSpec>,
    branch_b: Vec<ConvSpec>,
}

impl AggregationBlock {
    /// `[a1 (1,k,k), a2 (k,1,k), b1 (k,1,k), b2 (1,k,k)]`.
    pub fn new(layers: [ConvSpec; 4]) -> Result<Self> {
        let k = layers[0].kernel()[1];
        let sub = ConvMode::Submanifold;
        check_layer(&layers[0], sub, [1, k, k], "aggregation branch A layer 1 must be submanifold (1,k,k)")?;
        check_layer(&layers[1], sub, [k, 1, k], "aggregation branch A layer 2 must be submanifold (k,1,k)")?;
        check_layer(&layers[2], sub, [k, 1, k], "aggregation branch B layer 1 must be submanifold (k,1,k)")?;
        check_layer(&layers[3], sub, [1, k, k], "aggregation branch B layer 2 must be submanifold (1,k,k)")?;
        check_chain(&[&layers[0], &layers[1]])?;
        check_chain(&[&layers[2], &layers[3]])?;
        if layers[0].in_channels() != layers[2].in_channels() || layers[1].out_channels() != layers[3].out_channels() {
            return Err(Error::BlockSpec("branches must share input and output widths"));
        }
        let [a1, a2, b1, b2] = layers;
        Ok(Self { branch_a: alloc::vec![a1, a2], branch_b: alloc::vec![b1, b2] })
    }

    /// Two parallel single-layer `(k,k,1)` submanifold branches for a flat scale.
    pub fn flat(a: ConvSpec, b: ConvSpec) -> Result<Self> {
        let k = a.kernel()[0];
        check_layer(&a, ConvMode::Submanifold, [k, k, 1], "flat aggregation layers must be submanifold (k,k,1)")?;
        check_layer(&b, ConvMode::Submanifold, [k, k, 1], "flat aggregation layers must be submanifold (k,k,1)")?;
        if a.in_channels() != b.in_channels() || a.out_channels() != b.out_channels() {
            return Err(Error::BlockSpec("branches must share input and output widths"));
        }
        Ok(Self { branch_a: alloc::vec![a], branch_b: alloc::vec![b] })
    }

    pub fn seeded(k: usize, cin: usize, cout: usize, rng: &mut ParamRng) -> Result<Self> {
        let one = [1, 1, 1];
        let sub = ConvMode::Submanifold;
        Self::new([
            ConvSpec::seeded([1, k, k], one, cin, cout, sub, rng)?,
            ConvSpec::seeded([k, 1, k], one, cout, cout, sub, rng)?,
            ConvSpec::seeded([k, 1, k], one, cin, cout, sub, rng)?,
            ConvSpec::seeded([1, k, k], one, cout, cout, sub, rng)?,
        ])
    }

    pub fn seeded_flat(k: usize, cin: usize, cout: usize, rng: &mut ParamRng) -> Result<Self> {
        let sub = ConvMode::Submanifold;
        Self::flat(
            ConvSpec::seeded([k, k, 1], [1, 1, 1], cin, cout, sub, rng)?,
            ConvSpec::seeded([k, k, 1], [1, 1, 1], cin, cout, sub, rng)?,
        )
    }

    pub fn branch_a(&self) -> &[ConvSpec] {
        &self.branch_a
    }

    pub fn branch_b(&self) -> &[ConvSpec] {
        &self.branch_b
    }

    pub fn out_channels(&self) -> usize {
        self.branch_a.last().map(ConvSpec::out_channels).unwrap_or(0)
    }

    pub fn forward(&self, input: &SparseVoxelTensor, act: Activation, macs: &mut MacCount) -> Result<SparseVoxelTensor> {
        let run = |branch: &[ConvSpec], macs: &mut MacCount| -> Result<SparseVoxelTensor> {
            let mut x = layer(input, &branch[0], act, macs)?;
            for spec in &branch[1..] {
                x = layer(&x, spec, act, macs)?;
            }
            Ok(x)
        };
        let a = run(&self.branch_a, macs)?;
        let b = run(&self.branch_b, macs)?;
        let sum = a.features().iter().zip(b.features()).map(|(x, y)| x + y).collect();
        a.with_features(a.channels(), sum)
    }
}

/// Three planar regular layers in sequence, each followed by `act`.
pub fn completion_block(input: &SparseVoxelTensor, layers: [ConvSpec; 3], act: Activation) -> Result<SparseVoxelTensor> {
    CompletionBlock::new(layers)?.forward(input, act, &mut MacCount::default())
}

pub fn completion_block_flat(input: &SparseVoxelTensor, layer: ConvSpec, act: Activation) -> Result<SparseVoxelTensor> {
    CompletionBlock::flat(layer)?.forward(input, act, &mut MacCount::default())
}

/// Branch A `(1,k,k) -> (k,1,k)` plus branch B `(k,1,k) -> (1,k,k)`.
pub fn aggregation_block(input: &SparseVoxelTensor, layers: [ConvSpec; 4], act: Activation) -> Result<SparseVoxelTensor> {
    AggregationBlock::new(layers)?.forward(input, act, &mut MacCount::default())
}

pub fn aggregation_block_flat(
    input: &SparseVoxelTensor,
    a: ConvSpec,
    b: ConvSpec,
    act: Activation,
) -> Result<SparseVoxelTensor> {
    AggregationBlock::flat(a, b)?.forward(input, act, &mut MacCount::default())
}

/// Strided regular convolution halving the grid along the strided axes.
///
/// Every input `p` activates `floor(p / stride)`; kernels wider than the
/// stride also activate the neighbouring cells their window reaches.
pub fn downsample(input: &SparseVoxelTensor, spec: &ConvSpec) -> Result<SparseVoxelTensor> {
    downsample_counted(input, spec).map(|(t, _)| t)
}

pub fn downsample_counted(input: &SparseVoxelTensor, spec: &ConvSpec) -> Result<(SparseVoxelTensor, MacCount)> {
    if spec.mode() != ConvMode::Regular || !matches!(spec.stride(), [2, 2, 2] | [2, 2, 1]) {
        return Err(Error::BlockSpec("downsample must be regular with stride (2,2,2) or (2,2,1)"));
    }
    conv_counted(input, spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::GridShape;
    use alloc::vec;

    fn conv(kernel: [usize; 3], mode: ConvMode, w: f32) -> ConvSpec {
        let v = kernel.iter().product();
        ConvSpec::new(kernel, [1, 1, 1], 1, 1, mode, vec![w; v], None).unwrap()
    }

    #[test]
    fn leaky_relu() {
        let a = Activation::default();
        assert_eq!(a.apply(2.0), 2.0);
        assert_eq!(a.apply(-2.0), -0.02);
        assert_eq!(Activation::Identity.apply(-2.0), -2.0);
    }

    #[test]
    fn completion_rejects_wrong_order() {
        let r = ConvMode::Regular;
        let bad = [conv([3, 1, 3], r, 1.0), conv([3, 3, 1], r, 1.0), conv([1, 3, 3], r, 1.0)];
        assert!(matches!(CompletionBlock::new(bad), Err(Error::BlockSpec(_))));
        let sub = [conv([3, 3, 1], ConvMode::Submanifold, 1.0), conv([3, 1, 3], r, 1.0), conv([1, 3, 3], r, 1.0)];
        assert!(CompletionBlock::new(sub).is_err());
    }

    #[test]
    fn aggregation_rejects_regular_layers() {
        let s = ConvMode::Submanifold;
        let bad = [
            conv([1, 3, 3], ConvMode::Regular, 1.0),
            conv([3, 1, 3], s, 1.0),
            conv([3, 1, 3], s, 1.0),
            conv([1, 3, 3], s, 1.0),
        ];
        assert!(AggregationBlock::new(bad).is_err());
    }

    #[test]
    fn empty_inputs_pass_through() {
        let sh = GridShape::new(8, 8, 8).unwrap();
        let t = SparseVoxelTensor::empty(sh, 1).unwrap();
        let r = ConvMode::Regular;
        let out = completion_block(&t, [conv([3, 3, 1], r, 1.0), conv([3, 1, 3], r, 1.0), conv([1, 3, 3], r, 1.0)], Activation::default())
            .unwrap();
        assert!(out.is_empty());
        let s = ConvMode::Submanifold;
        let out = aggregation_block(
            &t,
            [conv([1, 3, 3], s, 1.0), conv([3, 1, 3], s, 1.0), conv([3, 1, 3], s, 1.0), conv([1, 3, 3], s, 1.0)],
            Activation::default(),
        )
        .unwrap();
        assert!(out.is_empty());
        let ds = ConvSpec::new([3, 3, 3], [2, 2, 2], 1, 1, r, vec![1.0; 27], None).unwrap();
        assert!(downsample(&t, &ds).unwrap().is_empty());
    }

    #[test]
    fn single_voxel_aggregation_is_center_tap_chain() {
        // Only the centre taps can fire without neighbours; hand-evaluated:
        // branch A: 0.5 * (-2) = -1 -> leaky -0.01 -> * 3 = -0.03 -> leaky -0.0003
        // branch B: 4 * (-2) = -8 -> leaky -0.08 -> * -1 = 0.08
        let sh = GridShape::new(5, 5, 5).unwrap();
        let t = SparseVoxelTensor::new(sh, 1, vec![[2, 2, 2]], vec![-2.0]).unwrap();
        let s = ConvMode::Submanifold;
        let with_center = |kernel: [usize; 3], center: f32| {
            let mut w = vec![7.0; 9];
            w[4] = center;
            ConvSpec::new(kernel, [1, 1, 1], 1, 1, s, w, None).unwrap()
        };
        let out = aggregation_block(
            &t,
            [with_center([1, 3, 3], 0.5), with_center([3, 1, 3], 3.0), with_center([3, 1, 3], 4.0), with_center([1, 3, 3], -1.0)],
            Activation::LeakyRelu(0.01),
        )
        .unwrap();
        assert_eq!(out.coords(), t.coords());
        let expected = -0.0003f32 + 0.08;
        assert!((out.features()[0] - expected).abs() < 1e-7, "{}", out.features()[0]);
    }

    #[test]
    fn downsample_rejects_bad_stride() {
        let t = SparseVoxelTensor::empty(GridShape::new(4, 4, 4).unwrap(), 1).unwrap();
        let s = ConvSpec::new([3, 3, 3], [1, 1, 1], 1, 1, ConvMode::Regular, vec![1.0; 27], None).unwrap();
        assert!(downsample(&t, &s).is_err());
    }

    #[test]
    fn downsample_overlapping_windows() {
        let sh = GridShape::new(4, 4, 4).unwrap();
        let t = SparseVoxelTensor::new(sh, 1, vec![[0, 0, 0], [1, 1, 1]], vec![1.0, 1.0]).unwrap();
        let k1 = ConvSpec::new([1, 1, 1], [2, 2, 2], 1, 1, ConvMode::Regular, vec![1.0], None).unwrap();
        let k3 = ConvSpec::new([3, 3, 3], [2, 2, 2], 1, 1, ConvMode::Regular, vec![1.0; 27], None).unwrap();
        // A 1-tap kernel only samples even positions.
        assert_eq!(downsample(&t, &k1).unwrap().coords(), &[[0, 0, 0]]);
        // The 3-tap window of cell 1 reaches input 1, so (1,1,1) lights up all eight cells.
        let out = downsample(&t, &k3).unwrap();
        assert_eq!(out.shape(), GridShape::new(2, 2, 2).unwrap());
        assert_eq!(out.len(), 8);
        assert_eq!(out.feature(0), &[2.0]);
    }
}
