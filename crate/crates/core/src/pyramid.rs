//! Multi-scale sparse feature pyramid and interpolation fusion.
//!
//! Scale `l` (1-based) has stride `2^(l-1)` relative to the base grid. The
//! last two scales of a pyramid with at least three levels (and the second
//! scale of a two-level pyramid) are flat: their height axis is summed away
//! before the downsample into that scale, and they run 2D blocks.
//!
//! Voxel `(x, y, z)` of a scale with stride `s` has its centre at
//! `((x + 0.5) s, (y + 0.5) s, (z + 0.5) s)` in base-grid units. A flat scale
//! is constant along height; its voxels sit at mid-height `D / 2` when they
//! are interpolation targets.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::flops::{MacCount, MacLedger, NoProbe, Probe, Stage};
use crate::init::ParamRng;
use crate::spconv::{conv_counted, Activation, AggregationBlock, CompletionBlock, ConvMode, ConvSpec};
use crate::tensor::{Coord, GridShape, SparseVoxelTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScaleMeta {
    pub level: usize,
    pub stride_factor: usize,
    pub collapsed: bool,
    pub shape: GridShape,
    pub base: GridShape,
}

/// Whether `level` of an `levels`-deep pyramid is a flat scale.
pub fn is_collapsed(level: usize, levels: usize) -> bool {
    level >= 2 && level + 1 >= levels
}

impl ScaleMeta {
    pub fn for_level(base: GridShape, level: usize, levels: usize) -> Self {
        let s = 1usize << (level - 1);
        let collapsed = is_collapsed(level, levels);
        let shape = GridShape {
            h: base.h.div_ceil(s),
            w: base.w.div_ceil(s),
            d: if collapsed { 1 } else { base.d.div_ceil(s) },
        };
        Self { level, stride_factor: s, collapsed, shape, base }
    }

    /// Voxel centre in base-grid units.
    pub fn center(&self, c: Coord) -> [f64; 3] {
        let s = self.stride_factor as f64;
        let z = if self.collapsed { self.base.d as f64 / 2.0 } else { (c[2] as f64 + 0.5) * s };
        [(c[0] as f64 + 0.5) * s, (c[1] as f64 + 0.5) * s, z]
    }

    /// Base-grid point in this scale's continuous index space (centres at integers).
    /// Flat scales report height index 0.
    pub fn to_index_space(&self, p: [f64; 3]) -> [f64; 3] {
        let s = self.stride_factor as f64;
        let z = if self.collapsed { 0.0 } else { p[2] / s - 0.5 };
        [p[0] / s - 0.5, p[1] / s - 0.5, z]
    }

    /// Interpolation stencil size: 8 for a 3D source, 4 for a flat one.
    pub fn stencil(&self) -> usize {
        if self.collapsed {
            4
        } else {
            8
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid {
    scales: Vec<(ScaleMeta, SparseVoxelTensor)>,
    fuse_weights: Vec<f32>,
}

impl FeaturePyramid {
    pub fn new(scales: Vec<(ScaleMeta, SparseVoxelTensor)>, fuse_weights: Vec<f32>) -> Result<Self> {
        if fuse_weights.len() != scales.len() {
            return Err(Error::LengthMismatch { what: "fuse weights", expected: scales.len(), actual: fuse_weights.len() });
        }
        for (meta, t) in &scales {
            if meta.shape != t.shape() {
                return Err(Error::InvalidConfig("scale tensor shape does not match its metadata"));
            }
        }
        if let Some((_, first)) = scales.first() {
            if let Some((_, t)) = scales.iter().find(|(_, t)| t.channels() != first.channels()) {
                return Err(Error::ChannelMismatch { expected: first.channels(), actual: t.channels() });
            }
        }
        Ok(Self { scales, fuse_weights })
    }

    pub fn levels(&self) -> usize {
        self.scales.len()
    }

    pub fn scales(&self) -> &[(ScaleMeta, SparseVoxelTensor)] {
        &self.scales
    }

    pub fn scale(&self, i: usize) -> (&ScaleMeta, &SparseVoxelTensor) {
        let (m, t) = &self.scales[i];
        (m, t)
    }

    pub fn fuse_weights(&self) -> &[f32] {
        &self.fuse_weights
    }

    pub fn channels(&self) -> usize {
        self.scales.first().map(|(_, t)| t.channels()).unwrap_or(0)
    }

    pub fn byte_size(&self) -> usize {
        self.scales.iter().map(|(_, t)| t.byte_size()).sum()
    }
}

/// Multilinear interpolation from a sparse source scale at target voxel centres.
///
/// Inactive or out-of-grid stencil corners count as zero vectors and the
/// weights are not renormalized.
pub fn sparse_interp(
    source: (&ScaleMeta, &SparseVoxelTensor),
    target_meta: &ScaleMeta,
    target_coords: &[Coord],
) -> Vec<f32> {
    let (src_meta, src) = source;
    let c = src.channels();
    let dims = src.shape().dims();
    let mut out = vec![0.0f32; target_coords.len() * c];
    for (t, &tc) in target_coords.iter().enumerate() {
        let u = src_meta.to_index_space(target_meta.center(tc));
        let mut corners: [[(i64, f32); 2]; 3] = [[(0, 0.0); 2]; 3];
        let mut counts = [2usize; 3];
        for a in 0..3 {
            if a == 2 && src_meta.collapsed {
                corners[a][0] = (0, 1.0);
                counts[a] = 1;
                continue;
            }
            let i0 = libm::floor(u[a]);
            let frac = (u[a] - i0) as f32;
            corners[a] = [(i0 as i64, 1.0 - frac), (i0 as i64 + 1, frac)];
        }
        let dst = &mut out[t * c..(t + 1) * c];
        for &(x, wx) in &corners[0][..counts[0]] {
            for &(y, wy) in &corners[1][..counts[1]] {
                for &(z, wz) in &corners[2][..counts[2]] {
                    let w = wx * wy * wz;
                    if w == 0.0 {
                        continue;
                    }
                    let inside = [x, y, z].iter().zip(dims).all(|(&v, n)| v >= 0 && v < n as i64);
                    if !inside {
                        continue;
                    }
                    if let Some(row) = src.row_of([x as u32, y as u32, z as u32]) {
                        for (d, f) in dst.iter_mut().zip(src.feature(row)) {
                            *d += w * f;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adds every other scale, interpolated onto each scale's active set and
/// weighted by its scalar, to that scale's own features.
pub fn fuse_scales(pyramid: &FeaturePyramid) -> FeaturePyramid {
    fuse_scales_counted(pyramid).0
}

pub fn fuse_scales_counted(pyramid: &FeaturePyramid) -> (FeaturePyramid, MacCount) {
    let c = pyramid.channels();
    let mut macs = MacCount::default();
    let mut scales = Vec::with_capacity(pyramid.levels());
    for (l, (meta, t)) in pyramid.scales.iter().enumerate() {
        let mut fused = t.features().to_vec();
        for (j, (src_meta, src)) in pyramid.scales.iter().enumerate() {
            if j == l {
                continue;
            }
            let w = pyramid.fuse_weights[j];
            let interp = sparse_interp((src_meta, src), meta, t.coords());
            for (d, v) in fused.iter_mut().zip(&interp) {
                *d += w * v;
            }
            let per_voxel = ((src_meta.stencil() + 1) * c) as u64;
            macs += MacCount::new(t.len() as u64 * per_voxel, meta.shape.volume() as u64 * per_voxel);
        }
        let fused = t.with_features(c, fused).expect("same active set and width");
        scales.push((*meta, fused));
    }
    (FeaturePyramid { scales, fuse_weights: pyramid.fuse_weights.clone() }, macs)
}

/// Blocks of one pyramid level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelParams {
    pub meta: ScaleMeta,
    /// Strided convolution into this level; `None` at the base level.
    pub downsample: Option<ConvSpec>,
    pub completion: CompletionBlock,
    pub aggregation: AggregationBlock,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PyramidParams {
    pub base: GridShape,
    pub levels: Vec<LevelParams>,
    /// 1x1x1 projections to the decoder width, one per level.
    pub projections: Vec<ConvSpec>,
    pub fuse_weights: Vec<f32>,
}

impl PyramidParams {
    /// Seeded parameters: `k`-sized decomposed blocks on 3D levels, `3x3` completion
    /// and `5x5` aggregation on flat levels, stride-2 `k`-kernel downsampling.
    pub fn seeded(
        base: GridShape,
        levels: usize,
        k: usize,
        channels: usize,
        decoder_channels: usize,
        rng: &mut ParamRng,
    ) -> Result<Self> {
        if levels == 0 {
            return Err(Error::InvalidConfig("pyramid needs at least one level"));
        }
        let mut out = Vec::with_capacity(levels);
        for l in 1..=levels {
            let meta = ScaleMeta::for_level(base, l, levels);
            let downsample = if l == 1 {
                None
            } else if meta.collapsed {
                Some(ConvSpec::seeded([k, k, 1], [2, 2, 1], channels, channels, ConvMode::Regular, rng)?)
            } else {
                Some(ConvSpec::seeded([k, k, k], [2, 2, 2], channels, channels, ConvMode::Regular, rng)?)
            };
            let (completion, aggregation) = if meta.collapsed {
                (
                    CompletionBlock::seeded_flat(3, channels, channels, rng)?,
                    AggregationBlock::seeded_flat(5, channels, channels, rng)?,
                )
            } else {
                (
                    CompletionBlock::seeded(k, channels, channels, rng)?,
                    AggregationBlock::seeded(k, channels, channels, rng)?,
                )
            };
            out.push(LevelParams { meta, downsample, completion, aggregation });
        }
        let projections = (0..levels)
            .map(|_| ConvSpec::seeded([1, 1, 1], [1, 1, 1], channels, decoder_channels, ConvMode::Submanifold, rng))
            .collect::<Result<Vec<_>>>()?;
        let fuse_weights = rng.uniform(levels, 0.25, 1.0);
        Ok(Self { base, levels: out, projections, fuse_weights })
    }
}

/// Diffuser plus downsample per level, then projection to the decoder width.
/// The returned pyramid is not yet fused.
pub fn build_pyramid(
    input: &SparseVoxelTensor,
    params: &PyramidParams,
    act: Activation,
    ledger: &mut MacLedger,
) -> Result<FeaturePyramid> {
    build_pyramid_probed(input, params, act, ledger, &mut NoProbe)
}

pub fn build_pyramid_probed(
    input: &SparseVoxelTensor,
    params: &PyramidParams,
    act: Activation,
    ledger: &mut MacLedger,
    probe: &mut dyn Probe,
) -> Result<FeaturePyramid> {
    if input.shape() != params.base {
        return Err(Error::InvalidConfig("input grid does not match the pyramid base shape"));
    }
    let mut raw: Vec<SparseVoxelTensor> = Vec::with_capacity(params.levels.len());
    for (i, level) in params.levels.iter().enumerate() {
        let tag = level.meta.level as u8;
        let x = match (&level.downsample, raw.last()) {
            (Some(ds), Some(prev)) => {
                let collapse = level.meta.collapsed && !prev.shape().is_flat();
                let src = if collapse { prev.collapse_height() } else { prev.clone() };
                probe.begin(Stage::Downsample(tag));
                let (x, m) = crate::spconv::downsample_counted(&src, ds)?;
                ledger.add(Stage::Downsample(tag), m);
                probe.end(Stage::Downsample(tag));
                x
            }
            (None, None) => input.clone(),
            _ => return Err(Error::InvalidConfig("only the base level may skip downsampling")),
        };
        probe.begin(Stage::Diffuser(tag));
        let mut m = MacCount::default();
        let x = level.completion.forward(&x, act, &mut m)?;
        let x = level.aggregation.forward(&x, act, &mut m)?;
        ledger.add(Stage::Diffuser(tag), m);
        probe.end(Stage::Diffuser(tag));
        if x.shape() != level.meta.shape {
            return Err(Error::InvalidConfig("level output shape does not match its metadata"));
        }
        debug_assert_eq!(i + 1, level.meta.level);
        raw.push(x);
    }
    probe.begin(Stage::Projection);
    let mut scales = Vec::with_capacity(raw.len());
    for ((level, proj), x) in params.levels.iter().zip(&params.projections).zip(&raw) {
        let (y, m) = conv_counted(x, proj)?;
        ledger.add(Stage::Projection, m);
        scales.push((level.meta, y));
    }
    probe.end(Stage::Projection);
    FeaturePyramid::new(scales, params.fuse_weights.clone())
}
