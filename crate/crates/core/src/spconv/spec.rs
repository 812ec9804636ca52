use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::init::ParamRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvMode {
    /// Output active wherever the window touches an active input.
    Regular,
    /// Output active set equals the input active set.
    Submanifold,
}

/// Kernel geometry and weights of one convolution layer.
///
/// Weights are stored per offset as `in_channels x out_channels` row-major
/// blocks, offsets ordered lexicographically by `(dx, dy, dz)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvSpec {
    kernel: [usize; 3],
    stride: [usize; 3],
    in_channels: usize,
    out_channels: usize,
    mode: ConvMode,
    weights: Vec<f32>,
    bias: Option<Vec<f32>>,
}

impl ConvSpec {
    pub fn new(
        kernel: [usize; 3],
        stride: [usize; 3],
        in_channels: usize,
        out_channels: usize,
        mode: ConvMode,
        weights: Vec<f32>,
        bias: Option<Vec<f32>>,
    ) -> Result<Self> {
        if kernel.iter().any(|&k| k == 0 || k % 2 == 0) {
            return Err(Error::InvalidKernel(kernel));
        }
        if stride.contains(&0) {
            return Err(Error::InvalidStride(stride));
        }
        if in_channels == 0 || out_channels == 0 {
            return Err(Error::EmptyDimension("channels"));
        }
        if mode == ConvMode::Submanifold && stride != [1, 1, 1] {
            return Err(Error::StridedSubmanifold);
        }
        let volume = kernel.iter().product::<usize>();
        let expected = volume * in_channels * out_channels;
        if weights.len() != expected {
            return Err(Error::LengthMismatch { what: "conv weights", expected, actual: weights.len() });
        }
        if let Some(b) = &bias {
            if b.len() != out_channels {
                return Err(Error::LengthMismatch { what: "conv bias", expected: out_channels, actual: b.len() });
            }
        }
        Ok(Self { kernel, stride, in_channels, out_channels, mode, weights, bias })
    }

    /// Weights uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, no bias.
    pub fn seeded(
        kernel: [usize; 3],
        stride: [usize; 3],
        in_channels: usize,
        out_channels: usize,
        mode: ConvMode,
        rng: &mut ParamRng,
    ) -> Result<Self> {
        let volume = kernel.iter().product::<usize>();
        let weights = rng.fan_in_uniform(volume * in_channels * out_channels, volume * in_channels);
        Self::new(kernel, stride, in_channels, out_channels, mode, weights, None)
    }

    /// 1x1x1 submanifold layer with identity weights.
    pub fn identity(channels: usize) -> Self {
        let mut w = alloc::vec![0.0; channels * channels];
        for i in 0..channels {
            w[i * channels + i] = 1.0;
        }
        Self::new([1, 1, 1], [1, 1, 1], channels, channels, ConvMode::Submanifold, w, None)
            .expect("identity spec is valid")
    }

    pub fn kernel(&self) -> [usize; 3] {
        self.kernel
    }

    pub fn stride(&self) -> [usize; 3] {
        self.stride
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn mode(&self) -> ConvMode {
        self.mode
    }

    pub fn bias(&self) -> Option<&[f32]> {
        self.bias.as_deref()
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    pub fn radius(&self) -> [i32; 3] {
        self.kernel.map(|k| (k as i32 - 1) / 2)
    }

    /// Kernel offsets in weight order.
    pub fn offsets(&self) -> Vec<[i32; 3]> {
        let r = self.radius();
        let mut out = Vec::with_capacity(self.kernel_volume());
        for dx in -r[0]..=r[0] {
            for dy in -r[1]..=r[1] {
                for dz in -r[2]..=r[2] {
                    out.push([dx, dy, dz]);
                }
            }
        }
        out
    }

    /// `in_channels x out_channels` block for offset index `o`.
    pub fn offset_weights(&self, o: usize) -> &[f32] {
        let n = self.in_channels * self.out_channels;
        &self.weights[o * n..(o + 1) * n]
    }

    pub fn center_offset(&self) -> usize {
        self.kernel_volume() / 2
    }

    /// MACs of the same layer on a fully dense grid, counting only taps that
    /// land inside the input grid (padding taps multiply zeros and are free).
    pub fn dense_macs(&self, in_dims: [usize; 3]) -> u64 {
        let r = self.radius();
        let mut taps = 1u64;
        for a in 0..3 {
            let n_in = in_dims[a] as i64;
            let n_out = in_dims[a].div_ceil(self.stride[a]) as i64;
            let mut t = 0u64;
            for u in 0..n_out {
                for off in -r[a] as i64..=r[a] as i64 {
                    let p = u * self.stride[a] as i64 + off;
                    if (0..n_in).contains(&p) {
                        t += 1;
                    }
                }
            }
            taps *= t;
        }
        taps * (self.in_channels * self.out_channels) as u64
    }
}
