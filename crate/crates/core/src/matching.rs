//! Bipartite matching of predicted masks to ground-truth class masks, and
//! the forward-only training losses evaluated on that matching.
//!
//! Ground truth is semantic: one mask per class present in the grid, ordered
//! by class. Masks are compared at a seeded set of sampled voxels.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::head::{MaskPrediction, OccupancyGrid};
use crate::linalg::{sigmoid, softmax_in_place, Matrix};
use crate::tensor::{Coord, CoordIndex, GridShape};

/// Dense row-major `f64` cost matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::LengthMismatch { what: "cost matrix", expected: rows * cols, actual: data.len() });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> CostMatrix {
        let mut t = CostMatrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.set(c, r, self.get(r, c));
            }
        }
        t
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Query-to-mask pairs, sorted by query.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Assignment {
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_queries: Vec<usize>,
}

impl Assignment {
    /// Builds from pairs in any order; queries in `0..num_queries` without a pair are unmatched.
    pub fn from_pairs(mut pairs: Vec<(usize, usize)>, num_queries: usize) -> Self {
        pairs.sort_unstable();
        let mut matched = vec![false; num_queries];
        for &(q, _) in &pairs {
            matched[q] = true;
        }
        let unmatched_queries = (0..num_queries).filter(|&q| !matched[q]).collect();
        Self { pairs, unmatched_queries }
    }

    /// Sum of the assigned entries, accumulated in query order.
    pub fn total_cost(&self, cost: &CostMatrix) -> f64 {
        self.pairs.iter().map(|&(q, m)| cost.get(q, m)).sum()
    }

    pub fn mask_of(&self, query: usize) -> Option<usize> {
        self.pairs.iter().find(|(q, _)| *q == query).map(|&(_, m)| m)
    }
}

/// Minimum-cost assignment of `min(rows, cols)` pairs (shortest augmenting
/// paths with row and column potentials, `O(n^2 m)`).
pub fn hungarian_match(cost: &CostMatrix) -> Result<Assignment> {
    if !cost.is_finite() {
        return Err(Error::NonFiniteCost);
    }
    if cost.rows > cost.cols {
        let t = hungarian_match(&cost.transpose())?;
        let pairs = t.pairs.into_iter().map(|(c, r)| (r, c)).collect();
        return Ok(Assignment::from_pairs(pairs, cost.rows));
    }
    let (n, m) = (cost.rows, cost.cols);
    // 1-based; row/column 0 is the virtual start.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost.get(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let pairs = (1..=m).filter(|&j| owner[j] != 0).map(|j| (owner[j] - 1, j - 1)).collect();
    Ok(Assignment::from_pairs(pairs, n))
}

/// A labelled grid and its class count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    pub grid: OccupancyGrid,
    pub num_classes: usize,
}

impl GroundTruth {
    pub fn new(grid: OccupancyGrid, num_classes: usize) -> Result<Self> {
        let grid = OccupancyGrid::new(grid.shape, grid.labels, num_classes)?;
        Ok(Self { grid, num_classes })
    }

    /// Classes with at least one voxel, ascending; mask `m` is class `present()[m]`.
    pub fn present(&self) -> Vec<u16> {
        let mut seen = vec![false; self.num_classes + 1];
        for &l in &self.grid.labels {
            seen[l as usize] = true;
        }
        (1..=self.num_classes).filter(|&c| seen[c]).map(|c| c as u16).collect()
    }
}

/// `count` voxels drawn uniformly with replacement.
pub fn sample_points(shape: GridShape, count: usize, seed: u64) -> Vec<Coord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| [rng.gen_range(0..shape.h as u32), rng.gen_range(0..shape.w as u32), rng.gen_range(0..shape.d as u32)])
        .collect()
}

/// Cost and loss weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchWeights {
    pub cls: f64,
    pub bce: f64,
    pub dice: f64,
}

impl Default for MatchWeights {
    fn default() -> Self {
        Self { cls: 2.0, bce: 5.0, dice: 5.0 }
    }
}

/// Mask logits of every query at `points`, `N_q x P`; voxels outside the
/// kept set take the query's empty-mask value.
pub fn mask_logits_at(pred: &MaskPrediction, points: &[Coord]) -> Result<Matrix> {
    let mut index = CoordIndex::with_capacity(pred.coords.len());
    for (i, &c) in pred.coords.iter().enumerate() {
        index.insert(c, i as u32);
    }
    let n_q = pred.num_queries();
    let mut out = Matrix::zeros(n_q, points.len());
    for (p, &c) in points.iter().enumerate() {
        if !pred.shape.contains(c) {
            return Err(Error::CoordOutOfBounds { coord: c, shape: pred.shape });
        }
        let col = index.get(c);
        for q in 0..n_q {
            let v = match col {
                Some(i) => pred.occ_masks.get(q, i as usize),
                None => pred.empty_mask[q],
            };
            out.set(q, p, v);
        }
    }
    Ok(out)
}

/// `softplus(x) - t x`, the cross-entropy of `sigmoid(x)` against `t`.
fn bce_logit(x: f64, t: f64) -> f64 {
    x.max(0.0) - x * t + libm::log1p(libm::exp(-x.abs()))
}

fn mask_terms(logits: &[f32], target: &[bool]) -> (f64, f64) {
    let mut bce = 0.0;
    let (mut inter, mut ps, mut ts) = (0.0, 0.0, 0.0);
    for (&x, &t) in logits.iter().zip(target) {
        let t = if t { 1.0 } else { 0.0 };
        bce += bce_logit(x as f64, t);
        let p = sigmoid(x) as f64;
        inter += p * t;
        ps += p;
        ts += t;
    }
    let bce = if logits.is_empty() { 0.0 } else { bce / logits.len() as f64 };
    let dice = 1.0 - (2.0 * inter + 1.0) / (ps + ts + 1.0);
    (bce, dice)
}

fn gt_targets(gt: &GroundTruth, points: &[Coord]) -> Result<Vec<u16>> {
    points
        .iter()
        .map(|&c| {
            if gt.grid.shape.contains(c) {
                Ok(gt.grid.get(c))
            } else {
                Err(Error::CoordOutOfBounds { coord: c, shape: gt.grid.shape })
            }
        })
        .collect()
}

fn class_probs(pred: &MaskPrediction) -> Matrix {
    let mut p = pred.class_logits.clone();
    for q in 0..p.rows() {
        softmax_in_place(p.row_mut(q));
    }
    p
}

/// `cost[q, m] = -w_cls p_q(class_m) + w_bce BCE + w_dice dice`, masks compared at `points`.
pub fn matching_cost(pred: &MaskPrediction, gt: &GroundTruth, points: &[Coord], w: &MatchWeights) -> Result<CostMatrix> {
    if pred.shape != gt.grid.shape {
        return Err(Error::InvalidConfig("prediction and ground truth grids differ"));
    }
    if pred.num_classes() != gt.num_classes {
        return Err(Error::LengthMismatch { what: "classes", expected: gt.num_classes, actual: pred.num_classes() });
    }
    let labels = gt_targets(gt, points)?;
    let logits = mask_logits_at(pred, points)?;
    let probs = class_probs(pred);
    let present = gt.present();
    let n_q = pred.num_queries();
    let mut cost = CostMatrix::zeros(n_q, present.len());
    for (m, &class) in present.iter().enumerate() {
        let target: Vec<bool> = labels.iter().map(|&l| l == class).collect();
        for q in 0..n_q {
            let (bce, dice) = mask_terms(logits.row(q), &target);
            let cls = -(probs.get(q, class as usize - 1) as f64);
            cost.set(q, m, w.cls * cls + w.bce * bce + w.dice * dice);
        }
    }
    Ok(cost)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub mask: f64,
    pub cls: f64,
    pub seg: f64,
    pub total: f64,
}

/// Forward losses on a matching.
///
/// * `mask`: mean over matched pairs of `w_bce BCE + w_dice dice` at `points`.
/// * `cls`: `w_cls` times the mean cross-entropy over all queries; unmatched
///   queries target the no-object slot.
/// * `seg`: mean BCE of the binary filter logits against ground-truth
///   non-emptiness at the filter's candidate voxels.
pub fn compute_losses(
    pred: &MaskPrediction,
    gt: &GroundTruth,
    assign: &Assignment,
    points: &[Coord],
    filter: (&[Coord], &[f32]),
    w: &MatchWeights,
) -> Result<LossBreakdown> {
    let present = gt.present();
    let n_q = pred.num_queries();
    if assign.pairs.iter().any(|&(q, m)| q >= n_q || m >= present.len()) {
        return Err(Error::InvalidConfig("assignment index out of range"));
    }
    let labels = gt_targets(gt, points)?;
    let logits = mask_logits_at(pred, points)?;

    let mut mask = 0.0;
    for &(q, m) in &assign.pairs {
        let target: Vec<bool> = labels.iter().map(|&l| l == present[m]).collect();
        let (bce, dice) = mask_terms(logits.row(q), &target);
        mask += w.bce * bce + w.dice * dice;
    }
    if !assign.pairs.is_empty() {
        mask /= assign.pairs.len() as f64;
    }

    let no_object = pred.num_classes();
    let mut cls = 0.0;
    for q in 0..n_q {
        let target = assign.mask_of(q).map(|m| present[m] as usize - 1).unwrap_or(no_object);
        cls += cross_entropy(pred.class_logits.row(q), target);
    }
    if n_q > 0 {
        cls = w.cls * cls / n_q as f64;
    }

    let (cands, bin) = filter;
    if cands.len() != bin.len() {
        return Err(Error::LengthMismatch { what: "filter logits", expected: cands.len(), actual: bin.len() });
    }
    let mut seg = 0.0;
    for (&c, &x) in cands.iter().zip(bin) {
        if !gt.grid.shape.contains(c) {
            return Err(Error::CoordOutOfBounds { coord: c, shape: gt.grid.shape });
        }
        seg += bce_logit(x as f64, if gt.grid.get(c) != 0 { 1.0 } else { 0.0 });
    }
    if !cands.is_empty() {
        seg /= cands.len() as f64;
    }
    Ok(LossBreakdown { mask, cls, seg, total: mask + cls + seg })
}

fn cross_entropy(logits: &[f32], target: usize) -> f64 {
    let max = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b as f64));
    let lse = max + libm::log(logits.iter().map(|&x| libm::exp(x as f64 - max)).sum::<f64>());
    lse - logits[target] as f64
}
