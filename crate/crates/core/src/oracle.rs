//! Dense reference implementations.
//!
//! Straight nested loops accumulating in `f64`. Nothing here calls the fast
//! path's rulebooks, hash index, GEMM or interpolation stencils; only the
//! plain data types are shared. Slow by design.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::head::{DenseMaskStack, QuerySet};
use crate::matching::{Assignment, CostMatrix};
use crate::pyramid::{FeaturePyramid, ScaleMeta};
use crate::spconv::ConvSpec;
use crate::tensor::{Coord, DenseVolume, GridShape};

/// Cross-correlation with zero padding `(k-1)/2`:
/// `out[u] = bias + sum_t in[u * stride + t - r] W[t]`, evaluated at every
/// output voxel of the `ceil(n / stride)` grid.
pub fn dense_conv_oracle(volume: &DenseVolume, spec: &ConvSpec) -> Result<DenseVolume> {
    let cin = spec.in_channels();
    let cout = spec.out_channels();
    if volume.channels() != cin {
        return Err(Error::ChannelMismatch { expected: cin, actual: volume.channels() });
    }
    let k = spec.kernel();
    let s = spec.stride();
    let in_sh = volume.shape();
    let n_in = [in_sh.h as i64, in_sh.w as i64, in_sh.d as i64];
    let out_sh = GridShape { h: in_sh.h.div_ceil(s[0]), w: in_sh.w.div_ceil(s[1]), d: in_sh.d.div_ceil(s[2]) };
    let w = spec.weights();
    let r = [(k[0] / 2) as i64, (k[1] / 2) as i64, (k[2] / 2) as i64];
    let src = volume.values();
    let mut out = vec![0.0f32; out_sh.h * out_sh.w * out_sh.d * cout];
    let mut acc = vec![0.0f64; cout];
    for ux in 0..out_sh.h {
        for uy in 0..out_sh.w {
            for uz in 0..out_sh.d {
                match spec.bias() {
                    Some(b) => acc.iter_mut().zip(b).for_each(|(a, &b)| *a = b as f64),
                    None => acc.fill(0.0),
                }
                for tx in 0..k[0] {
                    let px = (ux * s[0]) as i64 + tx as i64 - r[0];
                    if px < 0 || px >= n_in[0] {
                        continue;
                    }
                    for ty in 0..k[1] {
                        let py = (uy * s[1]) as i64 + ty as i64 - r[1];
                        if py < 0 || py >= n_in[1] {
                            continue;
                        }
                        for tz in 0..k[2] {
                            let pz = (uz * s[2]) as i64 + tz as i64 - r[2];
                            if pz < 0 || pz >= n_in[2] {
                                continue;
                            }
                            let tap = (tx * k[1] + ty) * k[2] + tz;
                            let base = ((px * n_in[1] + py) * n_in[2] + pz) as usize * cin;
                            for ci in 0..cin {
                                let x = src[base + ci] as f64;
                                if x == 0.0 {
                                    continue;
                                }
                                let wrow = &w[(tap * cin + ci) * cout..(tap * cin + ci + 1) * cout];
                                for (a, &wv) in acc.iter_mut().zip(wrow) {
                                    *a += x * wv as f64;
                                }
                            }
                        }
                    }
                }
                let o = ((ux * out_sh.w + uy) * out_sh.d + uz) * cout;
                for (d, &a) in out[o..o + cout].iter_mut().zip(&acc) {
                    *d = a as f32;
                }
            }
        }
    }
    DenseVolume::from_values(out_sh, cout, out)
}

/// Trilinear interpolation at continuous index-space points (voxel centres
/// at integers). Corners outside the grid contribute zero. Returns
/// `points.len() x C` values.
pub fn dense_interp_oracle(volume: &DenseVolume, points: &[[f64; 3]]) -> Vec<f64> {
    let sh = volume.shape();
    let n = [sh.h as i64, sh.w as i64, sh.d as i64];
    let c = volume.channels();
    let vals = volume.values();
    let mut out = vec![0.0f64; points.len() * c];
    for (pi, p) in points.iter().enumerate() {
        let lo = [libm::floor(p[0]), libm::floor(p[1]), libm::floor(p[2])];
        let t = [p[0] - lo[0], p[1] - lo[1], p[2] - lo[2]];
        for corner in 0..8 {
            let mut idx = [0i64; 3];
            let mut wt = 1.0;
            for a in 0..3 {
                let hi = (corner >> (2 - a)) & 1 == 1;
                idx[a] = lo[a] as i64 + hi as i64;
                wt *= if hi { t[a] } else { 1.0 - t[a] };
            }
            if wt == 0.0 || (0..3).any(|a| idx[a] < 0 || idx[a] >= n[a]) {
                continue;
            }
            let base = ((idx[0] * n[1] + idx[1]) * n[2] + idx[2]) as usize * c;
            for ch in 0..c {
                out[pi * c + ch] += wt * vals[base + ch] as f64;
            }
        }
    }
    out
}

/// Dense copy of a sparse scale, written without the tensor helpers.
fn to_dense(shape: GridShape, c: usize, coords: &[Coord], feats: &[f32]) -> DenseVolume {
    let mut v = vec![0.0f32; shape.h * shape.w * shape.d * c];
    for (row, p) in coords.iter().enumerate() {
        let base = ((p[0] as usize * shape.w + p[1] as usize) * shape.d + p[2] as usize) * c;
        v[base..base + c].copy_from_slice(&feats[row * c..(row + 1) * c]);
    }
    DenseVolume::from_values(shape, c, v).expect("sized")
}

/// Centre of `target` voxel `p` in the continuous index space of `source`.
///
/// Voxel `i` of a stride-`s` scale sits at `(i + 0.5) s` in base units; a
/// flat scale sits at mid-height `D / 2` and is read at height index 0.
pub fn source_point(target: &ScaleMeta, p: Coord, source: &ScaleMeta) -> [f64; 3] {
    let s = target.stride_factor as f64;
    let base = [
        (p[0] as f64 + 0.5) * s,
        (p[1] as f64 + 0.5) * s,
        if target.collapsed { target.base.d as f64 / 2.0 } else { (p[2] as f64 + 0.5) * s },
    ];
    let sj = source.stride_factor as f64;
    [base[0] / sj - 0.5, base[1] / sj - 0.5, if source.collapsed { 0.0 } else { base[2] / sj - 0.5 }]
}

/// Output active set of a regular convolution: every output voxel whose
/// window `u * stride + t - r` covers an active input. Sorted.
pub fn dilation_oracle(coords: &[Coord], shape: GridShape, kernel: [usize; 3], stride: [usize; 3]) -> Vec<Coord> {
    let n = [shape.h as i64, shape.w as i64, shape.d as i64];
    let mut active = vec![false; shape.h * shape.w * shape.d];
    for p in coords {
        active[((p[0] as usize * shape.w) + p[1] as usize) * shape.d + p[2] as usize] = true;
    }
    let out_n = [shape.h.div_ceil(stride[0]), shape.w.div_ceil(stride[1]), shape.d.div_ceil(stride[2])];
    let mut out = Vec::new();
    for ux in 0..out_n[0] {
        for uy in 0..out_n[1] {
            for uz in 0..out_n[2] {
                let u = [ux, uy, uz];
                let mut hit = false;
                'taps: for tx in 0..kernel[0] {
                    for ty in 0..kernel[1] {
                        for tz in 0..kernel[2] {
                            let t = [tx, ty, tz];
                            let mut p = [0i64; 3];
                            for a in 0..3 {
                                p[a] = (u[a] * stride[a]) as i64 + t[a] as i64 - (kernel[a] / 2) as i64;
                            }
                            if (0..3).any(|a| p[a] < 0 || p[a] >= n[a]) {
                                continue;
                            }
                            if active[((p[0] * n[1] + p[1]) * n[2] + p[2]) as usize] {
                                hit = true;
                                break 'taps;
                            }
                        }
                    }
                }
                if hit {
                    out.push([ux as u32, uy as u32, uz as u32]);
                }
            }
        }
    }
    out
}

/// Fused features of every scale at its own active voxels, one row-major
/// `N x C` block per scale, with geometry from [`source_point`].
pub fn dense_fusion_oracle(pyramid: &FeaturePyramid) -> Vec<Vec<f64>> {
    let c = pyramid.channels();
    let dense: Vec<DenseVolume> = pyramid
        .scales()
        .iter()
        .map(|(m, t)| to_dense(m.shape, c, t.coords(), t.features()))
        .collect();
    let mut out = Vec::with_capacity(pyramid.levels());
    for (l, (meta, t)) in pyramid.scales().iter().enumerate() {
        let mut fused: Vec<f64> = t.features().iter().map(|&v| v as f64).collect();
        for (j, (src_meta, _)) in pyramid.scales().iter().enumerate() {
            if j == l {
                continue;
            }
            let points: Vec<[f64; 3]> = t.coords().iter().map(|&p| source_point(meta, p, src_meta)).collect();
            let interp = dense_interp_oracle(&dense[j], &points);
            let wj = pyramid.fuse_weights()[j] as f64;
            for (f, v) in fused.iter_mut().zip(&interp) {
                *f += wj * v;
            }
        }
        out.push(fused);
    }
    out
}

/// Full outer product of the queries with every voxel's features, and its
/// `N_q H W D C` MAC count.
pub fn dense_head_oracle(q: &QuerySet, volume: &DenseVolume) -> Result<(DenseMaskStack, u64)> {
    let c = q.width();
    if volume.channels() != c {
        return Err(Error::ChannelMismatch { expected: c, actual: volume.channels() });
    }
    let vol = volume.shape().volume();
    let n_q = q.len();
    let qm = q.matrix().as_slice();
    let f = volume.values();
    let mut values = vec![0.0f32; n_q * vol];
    for qi in 0..n_q {
        for v in 0..vol {
            let mut acc = 0.0f64;
            for ch in 0..c {
                acc += qm[qi * c + ch] as f64 * f[v * c + ch] as f64;
            }
            values[qi * vol + v] = acc as f32;
        }
    }
    let macs = (n_q * vol * c) as u64;
    Ok((DenseMaskStack { num_queries: n_q, shape: volume.shape(), values }, macs))
}

/// Per-voxel linear classifier over the dense grid: `H W D C (classes + 1)` MACs.
pub fn linear_head_macs(shape: GridShape, channels: usize, classes: usize) -> u64 {
    (shape.volume() * channels * (classes + 1)) as u64
}

/// Injections enumerated by the exhaustive matcher before it refuses.
pub const BRUTE_FORCE_LIMIT: u64 = 20_000_000;

/// Exhaustive minimum over every injection of the smaller side into the
/// larger. Costs are summed in row order, as [`Assignment::total_cost`] does.
pub fn brute_force_match(cost: &CostMatrix) -> Result<Assignment> {
    let (rows, cols) = (cost.rows(), cost.cols());
    let (small, large) = (rows.min(cols), rows.max(cols));
    if small > 8 {
        return Err(Error::TooLarge("brute-force matching dimension"));
    }
    let count = (0..small).fold(1u64, |acc, i| acc.saturating_mul((large - i) as u64));
    if count > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge("brute-force injection count"));
    }
    if !cost.is_finite() {
        return Err(Error::NonFiniteCost);
    }
    // choice[i] = partner on the large side of small-side index i.
    let mut choice = vec![0usize; small];
    let mut used = vec![false; large];
    let mut best: Option<(f64, Vec<(usize, usize)>)> = None;
    search(cost, rows <= cols, 0, &mut choice, &mut used, &mut best);
    let pairs = best.map(|(_, p)| p).unwrap_or_default();
    Ok(Assignment::from_pairs(pairs, rows))
}

fn search(
    cost: &CostMatrix,
    rows_small: bool,
    depth: usize,
    choice: &mut [usize],
    used: &mut [bool],
    best: &mut Option<(f64, Vec<(usize, usize)>)>,
) {
    if depth == choice.len() {
        let mut pairs: Vec<(usize, usize)> = choice
            .iter()
            .enumerate()
            .map(|(i, &j)| if rows_small { (i, j) } else { (j, i) })
            .collect();
        pairs.sort_unstable();
        let mut total = 0.0;
        for &(r, c) in &pairs {
            total += cost.get(r, c);
        }
        if best.as_ref().is_none_or(|(b, _)| total < *b) {
            *best = Some((total, pairs));
        }
        return;
    }
    for j in 0..used.len() {
        if used[j] {
            continue;
        }
        used[j] = true;
        choice[depth] = j;
        search(cost, rows_small, depth + 1, choice, used, best);
        used[j] = false;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spconv::ConvMode;

    #[test]
    fn identity_kernel_returns_input() {
        let sh = GridShape::new(3, 2, 2).unwrap();
        let vals: Vec<f32> = (0..24).map(|i| i as f32 - 5.0).collect();
        let v = DenseVolume::from_values(sh, 2, vals).unwrap();
        assert_eq!(dense_conv_oracle(&v, &ConvSpec::identity(2)).unwrap(), v);
    }

    #[test]
    fn impulse_stamps_the_flipped_kernel() {
        let sh = GridShape::new(5, 5, 5).unwrap();
        let mut v = DenseVolume::zeros(sh, 1).unwrap();
        v.at_mut([2, 2, 2])[0] = 1.0;
        let w: Vec<f32> = (0..27).map(|i| i as f32).collect();
        let spec = ConvSpec::new([3, 3, 3], [1, 1, 1], 1, 1, ConvMode::Regular, w, None).unwrap();
        let out = dense_conv_oracle(&v, &spec).unwrap();
        for dx in 0..3u32 {
            for dy in 0..3u32 {
                for dz in 0..3u32 {
                    // Output at 2 + d reads the impulse through tap 2 - d.
                    let tap = ((2 - dx) * 9 + (2 - dy) * 3 + (2 - dz)) as f32;
                    assert_eq!(out.at([1 + dx, 1 + dy, 1 + dz])[0], tap);
                }
            }
        }
        assert_eq!(out.at([0, 0, 0])[0], 0.0);
    }

    #[test]
    fn interp_centres_and_midpoints() {
        let sh = GridShape::new(2, 1, 1).unwrap();
        let v = DenseVolume::from_values(sh, 2, vec![1.0, 10.0, 3.0, 30.0]).unwrap();
        assert_eq!(dense_interp_oracle(&v, &[[1.0, 0.0, 0.0]]), vec![3.0, 30.0]);
        assert_eq!(dense_interp_oracle(&v, &[[0.5, 0.0, 0.0]]), vec![2.0, 20.0]);
        // Half a voxel outside: the missing corner is zero.
        assert_eq!(dense_interp_oracle(&v, &[[-0.5, 0.0, 0.0]]), vec![0.5, 5.0]);
    }

    #[test]
    fn head_oracle_mac_closed_form() {
        let sh = GridShape::new(2, 2, 1).unwrap();
        let v = DenseVolume::from_values(sh, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let q = QuerySet::new(crate::linalg::Matrix::from_vec(1, 1, vec![2.0]).unwrap());
        let (m, macs) = dense_head_oracle(&q, &v).unwrap();
        assert_eq!(macs, 4);
        assert_eq!(m.values, vec![2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn brute_force_small_cases() {
        let c = CostMatrix::new(3, 3, vec![0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(brute_force_match(&c).unwrap().pairs, vec![(0, 0), (1, 1), (2, 2)]);
        let c = CostMatrix::new(2, 3, vec![5.0, 1.0, 3.0, 2.0, 1.5, 9.0]).unwrap();
        let a = brute_force_match(&c).unwrap();
        assert_eq!(a.pairs, vec![(0, 1), (1, 0)]);
        assert_eq!(a.total_cost(&c), 3.0);
        let t = brute_force_match(&c.transpose()).unwrap();
        assert_eq!(t.pairs, vec![(0, 1), (1, 0)]);
        assert!(brute_force_match(&CostMatrix::zeros(9, 9)).is_err());
        assert!(brute_force_match(&CostMatrix::zeros(8, 100)).is_err());
    }
}
