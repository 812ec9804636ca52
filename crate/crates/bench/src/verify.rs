//! Fast path against dense oracles on seeded random cases.
//!
//! Relative error is normwise per case, `max |fast - oracle| / max |oracle|`
//! (absolute when the oracle is all zero); a check reports the worst case.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparseocc_core::head::{
    attention_weights, decode_queries, make_attention_mask, occupancy_filter, reconstruct_dense_mask, update_queries,
    AttentionMask, AttentionParams, BinaryClassifier, ClassHead, DenseMaskStack, QuerySet,
};
use sparseocc_core::init::ParamRng;
use sparseocc_core::linalg::{sigmoid, Matrix};
use sparseocc_core::matching::{hungarian_match, CostMatrix};
use sparseocc_core::oracle::{
    brute_force_match, dense_conv_oracle, dense_fusion_oracle, dense_head_oracle, dense_interp_oracle, dilation_oracle,
    source_point,
};
use sparseocc_core::pyramid::{fuse_scales, sparse_interp, FeaturePyramid, ScaleMeta};
use sparseocc_core::spconv::{apply_conv, build_rulebook, ConvMode, ConvSpec};
use sparseocc_core::{densify, densify_with_fill, Coord, GridShape, SparseVoxelTensor};

pub const REL_TOL: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Suite {
    Conv,
    Interp,
    Head,
    Match,
    All,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub cases: usize,
    /// Worst relative error, for numeric comparisons.
    pub max_rel_error: Option<f64>,
    pub passed: bool,
    /// First failure, if any.
    pub detail: String,
}

impl Check {
    fn new(name: &'static str) -> Self {
        Self { name, cases: 0, max_rel_error: None, passed: true, detail: String::new() }
    }

    fn error(&mut self, e: f64) {
        let cur = self.max_rel_error.unwrap_or(0.0);
        self.max_rel_error = Some(if e.is_nan() { f64::NAN } else { cur.max(e) });
        if e.is_nan() || e > REL_TOL {
            self.fail(format!("relative error {e:.3e} exceeds {REL_TOL:e}"));
        }
    }

    fn expect(&mut self, ok: bool, what: impl FnOnce() -> String) {
        if !ok {
            self.fail(what());
        }
    }

    fn fail(&mut self, msg: String) {
        if self.passed {
            self.detail = format!("case {}: {msg}", self.cases);
        }
        self.passed = false;
    }

    pub fn line(&self) -> String {
        let err = self.max_rel_error.map(|e| format!(" max_rel_err={e:.3e}")).unwrap_or_default();
        let detail = if self.passed { String::new() } else { format!(" ({})", self.detail) };
        format!("{} {} cases={}{err}{detail}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.cases)
    }
}

pub fn rel_error<A: Copy + Into<f64>, B: Copy + Into<f64>>(fast: &[A], oracle: &[B]) -> f64 {
    if fast.len() != oracle.len() {
        return f64::INFINITY;
    }
    let mut diff = 0.0f64;
    let mut scale = 0.0f64;
    for (&a, &b) in fast.iter().zip(oracle) {
        let (a, b) = (a.into(), b.into());
        let d = (a - b).abs();
        diff = if d.is_nan() { f64::NAN } else { diff.max(d) };
        scale = scale.max(b.abs());
    }
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: GridShape, channels: usize, density: f64) -> SparseVoxelTensor {
    let coords: Vec<Coord> = (0..shape.volume()).filter(|_| rng.gen_bool(density)).map(|i| shape.coord_of(i)).collect();
    let feats = (0..coords.len() * channels).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    SparseVoxelTensor::new(shape, channels, coords, feats).expect("coordinates come from the grid")
}

fn random_shape(rng: &mut ChaCha8Rng, max: [usize; 3]) -> GridShape {
    GridShape::new(rng.gen_range(1..=max[0]), rng.gen_range(1..=max[1]), rng.gen_range(1..=max[2])).expect("positive")
}

fn random_kernel(rng: &mut ChaCha8Rng) -> [usize; 3] {
    let k = *[1usize, 3, 5].choose(rng).expect("non-empty");
    match rng.gen_range(0..4) {
        0 => [k, k, 1],
        1 => [k, 1, k],
        2 => [1, k, k],
        _ => [k, k, k],
    }
}

fn random_spec(rng: &mut ChaCha8Rng, kernel: [usize; 3], stride: [usize; 3], cin: usize, cout: usize, mode: ConvMode) -> ConvSpec {
    let kv: usize = kernel.iter().product();
    let w = (0..kv * cin * cout).map(|_| rng.gen_range(-0.5f32..0.5)).collect();
    let bias = rng.gen_bool(0.5).then(|| (0..cout).map(|_| rng.gen_range(-0.5f32..0.5)).collect());
    ConvSpec::new(kernel, stride, cin, cout, mode, w, bias).expect("valid spec")
}

/// Oracle output restricted to `coords`, row-major.
fn gather(dense: &sparseocc_core::DenseVolume, coords: &[Coord]) -> Vec<f32> {
    coords.iter().flat_map(|&c| dense.at(c).iter().copied()).collect()
}

/// Regular convolution: features at active outputs and the exact active set.
pub fn check_conv_regular(cases: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chk = Check::new("conv/regular");
    for _ in 0..cases {
        let shape = random_shape(&mut rng, [16, 16, 8]);
        let density = rng.gen_range(0.05..=0.30);
        let (cin, cout) = (rng.gen_range(1..=16), rng.gen_range(1..=16));
        let kernel = random_kernel(&mut rng);
        let stride = *[[1, 1, 1], [1, 1, 1], [2, 2, 2], [2, 2, 1]].choose(&mut rng).expect("non-empty");
        let input = random_tensor(&mut rng, shape, cin, density);
        let spec = random_spec(&mut rng, kernel, stride, cin, cout, ConvMode::Regular);
        let out = build_rulebook(&input, &spec).and_then(|rb| apply_conv(&input, &spec, &rb));
        match out {
            Ok(out) => {
                let expected = dilation_oracle(input.coords(), shape, kernel, stride);
                chk.expect(out.coords() == expected.as_slice(), || {
                    format!("active set has {} voxels, dilation oracle {}", out.len(), expected.len())
                });
                let dense = dense_conv_oracle(&densify(&input), &spec).expect("channels match");
                chk.error(rel_error(out.features(), &gather(&dense, out.coords())));
            }
            Err(e) => chk.fail(e.to_string()),
        }
        chk.cases += 1;
    }
    chk
}

/// Submanifold convolution: output set equals input set, features match the
/// dense oracle at the input's active voxels.
pub fn check_conv_submanifold(cases: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chk = Check::new("conv/submanifold");
    for _ in 0..cases {
        let shape = random_shape(&mut rng, [16, 16, 8]);
        let density = rng.gen_range(0.05..=0.30);
        let (cin, cout) = (rng.gen_range(1..=16), rng.gen_range(1..=16));
        let kernel = random_kernel(&mut rng);
        let input = random_tensor(&mut rng, shape, cin, density);
        let spec = random_spec(&mut rng, kernel, [1, 1, 1], cin, cout, ConvMode::Submanifold);
        match build_rulebook(&input, &spec).and_then(|rb| apply_conv(&input, &spec, &rb)) {
            Ok(out) => {
                chk.expect(out.coords() == input.coords(), || "active set changed".into());
                let dense = dense_conv_oracle(&densify(&input), &spec).expect("channels match");
                chk.error(rel_error(out.features(), &gather(&dense, input.coords())));
            }
            Err(e) => chk.fail(e.to_string()),
        }
        chk.cases += 1;
    }
    chk
}

/// A random pyramid over a base grid divisible by every scale.
pub fn random_pyramid(rng: &mut ChaCha8Rng) -> FeaturePyramid {
    let levels = rng.gen_range(2..=4);
    let f = 1usize << (levels - 1);
    let base = GridShape::new(f * rng.gen_range(1..=4), f * rng.gen_range(1..=4), f * rng.gen_range(1..=2)).expect("positive");
    let c = rng.gen_range(1..=8);
    let scales = (1..=levels)
        .map(|l| {
            let meta = ScaleMeta::for_level(base, l, levels);
            let density = rng.gen_range(0.1..=0.9);
            (meta, random_tensor(rng, meta.shape, c, density))
        })
        .collect();
    let weights = (0..levels).map(|_| rng.gen_range(0.25f32..1.0)).collect();
    FeaturePyramid::new(scales, weights).expect("consistent pyramid")
}

/// Every ordered pair of scales: sparse interpolation at target centres
/// against trilinear interpolation of the densified source.
pub fn check_interp(cases: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chk = Check::new("interp/pairs");
    for _ in 0..cases {
        let p = random_pyramid(&mut rng);
        for (tm, t) in p.scales() {
            for (sm, s) in p.scales() {
                if tm.level == sm.level {
                    continue;
                }
                let fast = sparse_interp((sm, s), tm, t.coords());
                let pts: Vec<[f64; 3]> = t.coords().iter().map(|&c| source_point(tm, c, sm)).collect();
                chk.error(rel_error(&fast, &dense_interp_oracle(&densify(s), &pts)));
            }
        }
        chk.cases += 1;
    }
    chk
}

/// Weighted cross-scale fusion against the dense fusion oracle.
pub fn check_fusion(cases: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chk = Check::new("interp/fusion");
    for _ in 0..cases {
        let p = random_pyramid(&mut rng);
        let fused = fuse_scales(&p);
        let oracle = dense_fusion_oracle(&p);
        for (((_, before), (_, after)), want) in p.scales().iter().zip(fused.scales()).zip(&oracle) {
            chk.expect(before.coords() == after.coords(), || "fusion changed an active set".into());
            chk.error(rel_error(after.features(), want));
        }
        chk.cases += 1;
    }
    chk
}

fn random_queries(rng: &mut ChaCha8Rng, n: usize, c: usize) -> QuerySet {
    QuerySet::new(Matrix::from_vec(n, c, (0..n * c).map(|_| rng.gen_range(-1.0f32..1.0)).collect()).expect("sized"))
}

/// Sparse decode plus reconstruction against the dense outer product over a
/// volume whose empty voxels hold the empty token. Even cases keep every
/// voxel with a zero token.
pub fn check_head_decode(cases: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chk = Check::new("head/decode");
    for case in 0..cases {
        let shape = random_shape(&mut rng, [12, 12, 6]);
        let c = rng.gen_range(1..=24);
        let n_q = rng.gen_range(1..=12);
        let full = case % 2 == 0;
        let density = if full { 1.0 } else { rng.gen_range(0.05..0.6) };
        let scale = random_tensor(&mut rng, shape, c, density);
        let weights = (0..c).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let classifier = BinaryClassifier { weights, bias: if full { 1e6 } else { 0.0 } };
        let token: Vec<f32> = if full { vec![0.0; c] } else { (0..c).map(|_| rng.gen_range(-1.0f32..1.0)).collect() };
        let q = random_queries(&mut rng, n_q, c);
        let head = ClassHead { weights: Matrix::zeros(c, 3), bias: vec![0.0; 3] };
        let run = || -> sparseocc_core::Result<(DenseMaskStack, u64, DenseMaskStack, u64)> {
            let f = occupancy_filter(&scale, &classifier, &token, 0.5)?;
            let (pred, macs) = decode_queries(&q, &f, &head)?;
            let dense_mask = reconstruct_dense_mask(&pred, shape)?;
            let volume = densify_with_fill(&f.kept, &token)?;
            let (oracle, oracle_macs) = dense_head_oracle(&q, &volume)?;
            let expected = (f.kept_len() * n_q * c + n_q * c) as u64;
            Ok((dense_mask, macs.mask - expected, oracle, oracle_macs))
        };
        match run() {
            Ok((fast, mac_gap, oracle, oracle_macs)) => {
                chk.expect(mac_gap == 0, || "decode MACs differ from the closed form".into());
                chk.expect(oracle_macs == (n_q * shape.volume() * c) as u64, || "oracle MAC count".into());
                chk.error(rel_error(&fast.values, &oracle.values));
            }
            Err(e) => chk.fail(e.to_string()),
        }
        chk.cases += 1;
    }
    chk
}

/// Masked attention contract and the sigmoid threshold of mask construction.
pub fn check_attention(cases: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chk = Check::new("head/attention");
    for _ in 0..cases {
        let target = random_shape(&mut rng, [6, 6, 3]);
        let factor = [rng.gen_range(1..=2), rng.gen_range(1..=2), rng.gen_range(1..=2)];
        let fine = GridShape::new(target.h * factor[0], target.w * factor[1], target.d * factor[2]).expect("positive");
        let c = rng.gen_range(1..=16);
        let n_q = rng.gen_range(1..=8);
        let raw: Vec<f32> = (0..n_q * fine.volume()).map(|_| rng.gen_range(-4.0f32..1.0)).collect();
        let prev = DenseMaskStack { num_queries: n_q, shape: fine, values: raw };
        let mask = match make_attention_mask(&prev, target) {
            Ok(m) => m,
            Err(e) => {
                chk.fail(e.to_string());
                continue;
            }
        };
        chk.expect(mask_matches_pooling(&prev, &mask, factor), || "attention mask differs from pooled sigmoid threshold".into());
        // One query fully blocked to exercise the pass-through rule.
        let mut mask = mask;
        let vol = target.volume();
        let blocked = rng.gen_range(0..n_q);
        mask.values[blocked * vol..(blocked + 1) * vol].fill(f32::NEG_INFINITY);

        let mut prng = ParamRng::new(rng.gen());
        let params = AttentionParams::seeded(c, &mut prng);
        let feats = random_tensor(&mut rng, target, c, 1.0);
        let volume = densify(&feats);
        let q = random_queries(&mut rng, n_q, c);
        let (w, _) = attention_weights(&q, Some(&mask), &volume, &params).expect("shapes match");
        for qi in 0..n_q {
            let mut sum = 0.0f64;
            let mut open = 0;
            for (&a, &m) in w.row(qi).iter().zip(mask.query(qi)) {
                if m == f32::NEG_INFINITY {
                    chk.expect(a == 0.0, || format!("masked weight {a} is not zero"));
                } else {
                    sum += a as f64;
                    open += 1;
                }
            }
            if open > 0 {
                chk.expect((sum - 1.0).abs() <= 1e-6, || format!("row sums to {sum}"));
            }
        }
        let (updated, _) = update_queries(&q, Some(&mask), &volume, &params).expect("shapes match");
        chk.expect(updated.matrix().row(blocked) == q.matrix().row(blocked), || "blocked query changed".into());
        chk.cases += 1;
    }
    chk
}

fn mask_matches_pooling(prev: &DenseMaskStack, mask: &AttentionMask, f: [usize; 3]) -> bool {
    let t = mask.shape;
    for q in 0..prev.num_queries {
        for lin in 0..t.volume() {
            let u = t.coord_of(lin);
            let mut m = f32::NEG_INFINITY;
            for dx in 0..f[0] {
                for dy in 0..f[1] {
                    for dz in 0..f[2] {
                        let c = [u[0] * f[0] as u32 + dx as u32, u[1] * f[1] as u32 + dy as u32, u[2] * f[2] as u32 + dz as u32];
                        m = m.max(prev.at(q, c));
                    }
                }
            }
            let want = if sigmoid(m) >= 0.5 { 0.0 } else { f32::NEG_INFINITY };
            if mask.query(q)[lin] != want {
                return false;
            }
        }
    }
    true
}

/// Hungarian totals equal exhaustive enumeration exactly. Half the matrices
/// hold small integers so that ties occur.
pub fn check_hungarian(cases: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chk = Check::new("match/hungarian");
    for case in 0..cases {
        let (r, c) = (rng.gen_range(1..=6), rng.gen_range(1..=6));
        let data = (0..r * c)
            .map(|_| if case % 2 == 0 { rng.gen_range(0..5) as f64 } else { rng.gen_range(-10.0..10.0) })
            .collect();
        let cost = CostMatrix::new(r, c, data).expect("sized");
        match (hungarian_match(&cost), brute_force_match(&cost)) {
            (Ok(h), Ok(b)) => {
                let (th, tb) = (h.total_cost(&cost), b.total_cost(&cost));
                chk.expect(th == tb, || format!("{r}x{c}: hungarian {th} vs brute force {tb}"));
                chk.expect(h.pairs.len() == r.min(c), || "assignment size".into());
            }
            (Err(e), _) | (_, Err(e)) => chk.fail(e.to_string()),
        }
        chk.cases += 1;
    }
    chk
}

pub fn run_suite(suite: Suite, seed: u64) -> Vec<Check> {
    match suite {
        Suite::Conv => vec![check_conv_regular(200, seed), check_conv_submanifold(100, seed.wrapping_add(1))],
        Suite::Interp => vec![check_interp(100, seed), check_fusion(100, seed.wrapping_add(1))],
        Suite::Head => vec![check_head_decode(50, seed), check_attention(50, seed.wrapping_add(1))],
        Suite::Match => vec![check_hungarian(500, seed)],
        Suite::All => [Suite::Conv, Suite::Interp, Suite::Head, Suite::Match]
            .into_iter()
            .flat_map(|s| run_suite(s, seed))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rel_error_is_normwise() {
        assert_eq!(rel_error(&[1.0f32, 2.0], &[1.0f64, 4.0]), 0.5);
        assert_eq!(rel_error(&[0.5f32], &[0.0f64]), 0.5);
        assert!(rel_error(&[f32::NAN], &[1.0f64]).is_nan());
        assert_eq!(rel_error(&[1.0f32], &[1.0f64, 2.0]), f64::INFINITY);
    }

    #[test]
    fn check_records_first_failure() {
        let mut c = Check::new("x");
        c.error(1e-7);
        c.cases += 1;
        c.error(1.0);
        c.error(2.0);
        assert!(!c.passed);
        assert_eq!(c.max_rel_error, Some(2.0));
        assert!(c.detail.starts_with("case 1"));
        assert!(c.line().starts_with("FAIL x cases=1"));
    }

    #[test]
    fn small_suites_pass() {
        for chk in [check_conv_regular(10, 1), check_interp(5, 2), check_head_decode(6, 3), check_attention(6, 4), check_hungarian(40, 5)] {
            assert!(chk.passed, "{}", chk.line());
        }
    }
}
