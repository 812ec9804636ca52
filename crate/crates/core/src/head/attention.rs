use alloc::vec;
use alloc::vec::Vec;

use super::decode::DenseMaskStack;
use super::QuerySet;
use crate::error::{Error, Result};
use crate::init::ParamRng;
use crate::linalg::{gemm, gemm_nt, sigmoid, softmax_in_place, Matrix};
use crate::tensor::{DenseVolume, GridShape};

/// Additive attention mask: `0` where attended, `-inf` where blocked.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMask {
    pub num_queries: usize,
    pub shape: GridShape,
    pub values: Vec<f32>,
}

impl AttentionMask {
    pub fn all_attended(num_queries: usize, shape: GridShape) -> Self {
        Self { num_queries, shape, values: vec![0.0; num_queries * shape.volume()] }
    }

    pub fn query(&self, q: usize) -> &[f32] {
        let v = self.shape.volume();
        &self.values[q * v..(q + 1) * v]
    }
}

/// Max-pools each query mask onto `target` and thresholds `sigmoid >= 0.5`.
pub fn make_attention_mask(prev: &DenseMaskStack, target: GridShape) -> Result<AttentionMask> {
    let src = prev.shape.dims();
    let dst = target.dims();
    let mut factor = [0usize; 3];
    for a in 0..3 {
        if !src[a].is_multiple_of(dst[a]) {
            return Err(Error::NonDivisibleShape { from: prev.shape, to: target });
        }
        factor[a] = src[a] / dst[a];
    }
    let vol = target.volume();
    let mut values = vec![f32::NEG_INFINITY; prev.num_queries * vol];
    for q in 0..prev.num_queries {
        let mut pooled = vec![f32::NEG_INFINITY; vol];
        let m = prev.query(q);
        for (lin, &v) in m.iter().enumerate() {
            let c = prev.shape.coord_of(lin);
            let t = target.linear([
                c[0] / factor[0] as u32,
                c[1] / factor[1] as u32,
                c[2] / factor[2] as u32,
            ]);
            if v > pooled[t] {
                pooled[t] = v;
            }
        }
        for (dst, p) in values[q * vol..(q + 1) * vol].iter_mut().zip(pooled) {
            if sigmoid(p) >= 0.5 {
                *dst = 0.0;
            }
        }
    }
    Ok(AttentionMask { num_queries: prev.num_queries, shape: target, values })
}

/// Query, key and value projections of one decoder layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
}

impl AttentionParams {
    pub fn seeded(width: usize, rng: &mut ParamRng) -> Self {
        let mut m = || Matrix::from_vec(width, width, rng.fan_in_uniform(width * width, width)).expect("sized");
        Self { w_q: m(), w_k: m(), w_v: m() }
    }
}

fn check(q: &QuerySet, mask: Option<&AttentionMask>, features: &DenseVolume, p: &AttentionParams) -> Result<()> {
    let c = q.width();
    if features.channels() != c {
        return Err(Error::ChannelMismatch { expected: c, actual: features.channels() });
    }
    for w in [&p.w_q, &p.w_k, &p.w_v] {
        if w.rows() != c || w.cols() != c {
            return Err(Error::ChannelMismatch { expected: c, actual: w.rows() });
        }
    }
    if let Some(m) = mask {
        if m.shape != features.shape() || m.num_queries != q.len() {
            return Err(Error::LengthMismatch {
                what: "attention mask",
                expected: q.len() * features.shape().volume(),
                actual: m.values.len(),
            });
        }
    }
    Ok(())
}

/// Masked softmax weights `N_q x HWD` and the MACs spent producing them.
///
/// Logits `(Q W_q)(F W_k)^T` are evaluated as `(Q W_q W_k^T) F^T`. `None`
/// means every position is attended.
pub fn attention_weights(
    q: &QuerySet,
    mask: Option<&AttentionMask>,
    features: &DenseVolume,
    params: &AttentionParams,
) -> Result<(Matrix, u64)> {
    check(q, mask, features, params)?;
    let c = q.width();
    let n_q = q.len();
    let vol = features.shape().volume();
    let qk = q.matrix().matmul(&params.w_q).matmul_t(&params.w_k);
    let mut logits = vec![0.0f32; n_q * vol];
    gemm_nt(n_q, c, vol, qk.as_slice(), features.values(), &mut logits);
    for (qi, row) in logits.chunks_exact_mut(vol.max(1)).enumerate() {
        if let Some(m) = mask {
            for (l, &mv) in row.iter_mut().zip(m.query(qi)) {
                *l += mv;
            }
        }
        softmax_in_place(row);
    }
    let macs = (2 * n_q * c * c + n_q * vol * c) as u64;
    Ok((Matrix::from_vec(n_q, vol, logits)?, macs))
}

/// One masked cross-attention step with a residual connection.
///
/// A query whose mask blocks every position gets a zero attention term and
/// passes through unchanged.
pub fn update_queries(
    q: &QuerySet,
    mask: Option<&AttentionMask>,
    features: &DenseVolume,
    params: &AttentionParams,
) -> Result<(QuerySet, u64)> {
    let (weights, mut macs) = attention_weights(q, mask, features, params)?;
    let c = q.width();
    let n_q = q.len();
    let vol = features.shape().volume();
    // (A F) W_v
    let mut pooled = vec![0.0f32; n_q * c];
    gemm(n_q, vol, c, weights.as_slice(), features.values(), &mut pooled, false);
    let attended = Matrix::from_vec(n_q, c, pooled)?.matmul(&params.w_v);
    let mut out = q.matrix().clone();
    for (o, a) in out.as_mut_slice().iter_mut().zip(attended.as_slice()) {
        *o += a;
    }
    macs += (n_q * vol * c + n_q * c * c) as u64;
    Ok((QuerySet::new(out), macs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stack(shape: GridShape, vals: Vec<f32>) -> DenseMaskStack {
        DenseMaskStack { num_queries: vals.len() / shape.volume(), shape, values: vals }
    }

    #[test]
    fn sign_extremes() {
        let sh = GridShape::new(4, 4, 2).unwrap();
        let t = GridShape::new(2, 2, 1).unwrap();
        let pos = make_attention_mask(&stack(sh, vec![3.0; 64]), t).unwrap();
        assert!(pos.values.iter().all(|&v| v == 0.0));
        let neg = make_attention_mask(&stack(sh, vec![-3.0; 64]), t).unwrap();
        assert!(neg.values.iter().all(|&v| v == f32::NEG_INFINITY));
    }

    #[test]
    fn single_positive_voxel_opens_enclosing_cell() {
        let sh = GridShape::new(4, 4, 4).unwrap();
        let mut vals = vec![-1.0; 64];
        vals[sh.linear([3, 0, 2])] = 0.25;
        let m = make_attention_mask(&stack(sh, vals), GridShape::new(2, 2, 2).unwrap()).unwrap();
        let open: Vec<usize> = (0..8).filter(|&i| m.values[i] == 0.0).collect();
        assert_eq!(open, vec![GridShape::new(2, 2, 2).unwrap().linear([1, 0, 1])]);
        // Exactly zero logit has sigmoid 0.5 and is attended.
        let m = make_attention_mask(&stack(sh, vec![0.0; 64]), sh).unwrap();
        assert!(m.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_divisible_rejected() {
        let sh = GridShape::new(5, 4, 4).unwrap();
        let r = make_attention_mask(&stack(sh, vec![0.0; 80]), GridShape::new(2, 2, 2).unwrap());
        assert!(matches!(r, Err(Error::NonDivisibleShape { .. })));
    }

    fn features(shape: GridShape, c: usize) -> DenseVolume {
        let vals = (0..shape.volume() * c).map(|i| ((i * 7) % 11) as f32 * 0.1 - 0.5).collect();
        DenseVolume::from_values(shape, c, vals).unwrap()
    }

    #[test]
    fn blocked_query_passes_through() {
        let sh = GridShape::new(2, 2, 2).unwrap();
        let f = features(sh, 3);
        let mut rng = ParamRng::new(5);
        let p = AttentionParams::seeded(3, &mut rng);
        let q = QuerySet::new(Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, -1.0, 0.5, 0.0]).unwrap());
        let mut mask = AttentionMask::all_attended(2, sh);
        mask.values[..8].fill(f32::NEG_INFINITY);
        let (out, _) = update_queries(&q, Some(&mask), &f, &p).unwrap();
        assert_eq!(out.matrix().row(0), q.matrix().row(0));
        assert_ne!(out.matrix().row(1), q.matrix().row(1));
    }

    #[test]
    fn uniform_attention_adds_mean_feature() {
        let sh = GridShape::new(2, 3, 2).unwrap();
        let c = 4;
        let f = features(sh, c);
        let p = AttentionParams { w_q: Matrix::zeros(c, c), w_k: Matrix::zeros(c, c), w_v: Matrix::identity(c) };
        let q = QuerySet::new(Matrix::from_vec(1, c, vec![1.0, -1.0, 0.0, 2.0]).unwrap());
        let (out, _) = update_queries(&q, None, &f, &p).unwrap();
        for ch in 0..c {
            let mean: f32 = (0..sh.volume()).map(|v| f.values()[v * c + ch]).sum::<f32>() / sh.volume() as f32;
            assert!((out.matrix().get(0, ch) - (q.matrix().get(0, ch) + mean)).abs() < 1e-6);
        }
    }

    #[test]
    fn weights_are_zero_where_masked_and_sum_to_one() {
        let sh = GridShape::new(3, 3, 2).unwrap();
        let c = 5;
        let f = features(sh, c);
        let mut rng = ParamRng::new(9);
        let p = AttentionParams::seeded(c, &mut rng);
        let q = QuerySet::new(Matrix::from_vec(3, c, rng.uniform(3 * c, -1.0, 1.0)).unwrap());
        let mut mask = AttentionMask::all_attended(3, sh);
        for (i, v) in mask.values.iter_mut().enumerate() {
            if i % 3 == 0 {
                *v = f32::NEG_INFINITY;
            }
        }
        let (w, _) = attention_weights(&q, Some(&mask), &f, &p).unwrap();
        for qi in 0..3 {
            let row = w.row(qi);
            let mut sum = 0.0f64;
            for (v, &m) in row.iter().zip(mask.query(qi)) {
                if m == f32::NEG_INFINITY {
                    assert_eq!(*v, 0.0);
                } else {
                    sum += *v as f64;
                }
            }
            assert!((sum - 1.0).abs() <= 1e-6);
        }
    }
}
