use alloc::vec;
use alloc::vec::Vec;

use super::attention::{make_attention_mask, update_queries, AttentionParams};
use super::decode::{decode_queries, reconstruct_dense_mask, ClassHead, DenseMaskStack, MaskPrediction};
use super::filter::{occupancy_filter, BinaryClassifier, FilteredScale};
use super::QuerySet;
use crate::error::{Error, Result};
use crate::flops::{MacCount, MacLedger, NoProbe, Probe, Stage};
use crate::init::ParamRng;
use crate::linalg::Matrix;
use crate::pyramid::FeaturePyramid;
use crate::tensor::densify_with_fill;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadConfig {
    pub layers: usize,
    /// Binary filter keeps voxels with `sigmoid(logit) >= threshold`.
    pub threshold: f32,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self { layers: 9, threshold: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    /// Initial queries, `N_q x C`.
    pub queries: Matrix,
    /// Shared by every scale.
    pub empty_token: Vec<f32>,
    /// One binary classifier per pyramid scale, finest first.
    pub filters: Vec<BinaryClassifier>,
    /// One projection set per layer.
    pub attention: Vec<AttentionParams>,
    pub class_head: ClassHead,
}

impl HeadParams {
    pub fn seeded(width: usize, num_queries: usize, classes: usize, levels: usize, layers: usize, rng: &mut ParamRng) -> Self {
        let queries = Matrix::from_vec(num_queries, width, rng.uniform(num_queries * width, -1.0, 1.0)).expect("sized");
        let empty_token = rng.fan_in_uniform(width, width);
        let filters = (0..levels).map(|_| BinaryClassifier::seeded(width, rng)).collect();
        let attention = (0..layers).map(|_| AttentionParams::seeded(width, rng)).collect();
        let class_head = ClassHead::seeded(width, classes, rng);
        Self { queries, empty_token, filters, attention, class_head }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput {
    /// One prediction per layer; the last is the output.
    pub predictions: Vec<MaskPrediction>,
    pub queries: QuerySet,
    /// Filter result of the finest scale, which every layer decodes against.
    pub finest: FilteredScale,
    /// Scale index (0 = finest) visited by each layer.
    pub schedule: Vec<usize>,
    pub ledger: MacLedger,
    /// One decode-plus-reconstruct pass against the finest scale, with its
    /// dense outer-product baseline.
    pub decode_pass: MacCount,
    /// Largest transient allocation of the head, in bytes.
    pub peak_bytes: usize,
}

impl HeadOutput {
    pub fn final_prediction(&self) -> &MaskPrediction {
        self.predictions.last().expect("at least one layer")
    }
}

/// Scale index per layer, cycling coarse to fine: `L-1, ..., 0, L-1, ...`.
pub fn layer_schedule(layers: usize, levels: usize) -> Vec<usize> {
    (0..layers).map(|i| levels - 1 - i % levels).collect()
}

pub fn run_head(pyramid: &FeaturePyramid, params: &HeadParams, config: &HeadConfig) -> Result<HeadOutput> {
    run_head_probed(pyramid, params, config, &mut NoProbe)
}

/// Each layer filters its scale (cached per scale), updates the queries by
/// masked cross-attention over that scale, and decodes masks against the
/// kept voxels of the finest scale. The first layer attends everywhere.
pub fn run_head_probed(
    pyramid: &FeaturePyramid,
    params: &HeadParams,
    config: &HeadConfig,
    probe: &mut dyn Probe,
) -> Result<HeadOutput> {
    let levels = pyramid.levels();
    if levels == 0 || config.layers == 0 {
        return Err(Error::InvalidConfig("head needs at least one scale and one layer"));
    }
    if params.filters.len() != levels {
        return Err(Error::LengthMismatch { what: "binary filters", expected: levels, actual: params.filters.len() });
    }
    if params.attention.len() < config.layers {
        return Err(Error::LengthMismatch {
            what: "attention layers",
            expected: config.layers,
            actual: params.attention.len(),
        });
    }
    let c = pyramid.channels();
    let n_q = params.queries.rows();
    let f32s = core::mem::size_of::<f32>();
    let mut ledger = MacLedger::new();
    let mut cache: Vec<Option<FilteredScale>> = vec![None; levels];
    let schedule = layer_schedule(config.layers, levels);
    filter_cached(pyramid, params, config, 0, &mut cache, &mut ledger, probe)?;
    let finest_shape = pyramid.scale(0).0.shape;
    let hwd = finest_shape.volume();
    let mut q = QuerySet::new(params.queries.clone());
    let mut prev: Option<DenseMaskStack> = None;
    let mut predictions = Vec::with_capacity(config.layers);
    let mut peak = 0usize;
    let mut decode_pass = MacCount::default();
    for (layer, &si) in schedule.iter().enumerate() {
        filter_cached(pyramid, params, config, si, &mut cache, &mut ledger, probe)?;
        let scale = cache[si].as_ref().expect("filtered above");

        probe.begin(Stage::HeadAttention);
        let dense = densify_with_fill(&scale.kept, &scale.empty_token)?;
        let mask = match prev.take() {
            Some(p) => Some(make_attention_mask(&p, scale.kept.shape())?),
            None => None,
        };
        let vol = dense.shape().volume();
        // Features, mask and softmax weights are live together.
        let live = (vol * c + 2 * n_q * vol) * f32s;
        peak = peak.max(live);
        let (next, macs) = update_queries(&q, mask.as_ref(), &dense, &params.attention[layer])?;
        drop(mask);
        drop(dense);
        q = next;
        ledger.add(Stage::HeadAttention, MacCount::new(macs, macs));
        probe.end(Stage::HeadAttention);

        probe.begin(Stage::HeadDecode);
        let finest = cache[0].as_ref().expect("finest filtered first");
        let (pred, dm) = decode_queries(&q, finest, &params.class_head)?;
        let mut sparse = dm.mask;
        if layer + 1 < config.layers {
            prev = Some(reconstruct_dense_mask(&pred, finest_shape)?);
            sparse += hwd as u64;
            peak = peak.max(n_q * hwd * f32s);
        }
        let dense_decode = (n_q * hwd * c) as u64;
        if layer == 0 {
            decode_pass = MacCount::new(dm.mask + hwd as u64, dense_decode);
        }
        ledger.add(Stage::HeadDecode, MacCount::new(sparse, dense_decode));
        ledger.add(Stage::HeadClassify, MacCount::new(dm.classify, dm.classify));
        probe.end(Stage::HeadDecode);
        predictions.push(pred);
    }
    let retained: usize = predictions.iter().map(|p| p.occ_masks.rows() * p.occ_masks.cols() * f32s).sum();
    let finest = cache[0].take().expect("finest filtered first");
    Ok(HeadOutput { predictions, queries: q, finest, schedule, ledger, decode_pass, peak_bytes: peak + retained })
}

fn filter_cached(
    pyramid: &FeaturePyramid,
    params: &HeadParams,
    config: &HeadConfig,
    i: usize,
    cache: &mut [Option<FilteredScale>],
    ledger: &mut MacLedger,
    probe: &mut dyn Probe,
) -> Result<()> {
    if cache[i].is_none() {
        probe.begin(Stage::HeadFilter);
        let (meta, t) = pyramid.scale(i);
        let c = t.channels() as u64;
        let f = occupancy_filter(t, &params.filters[i], &params.empty_token, config.threshold)?;
        ledger.add(Stage::HeadFilter, MacCount::new(t.len() as u64 * c, meta.shape.volume() as u64 * c));
        cache[i] = Some(f);
        probe.end(Stage::HeadFilter);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::head::{assemble_occupancy, decode_queries, update_queries};
    use crate::pyramid::ScaleMeta;
    use crate::tensor::{densify_with_fill, GridShape, SparseVoxelTensor};

    fn pyramid(levels: usize, c: usize, density_mod: usize, rng: &mut ParamRng) -> FeaturePyramid {
        let base = GridShape::new(8, 8, 4).unwrap();
        let scales = (1..=levels)
            .map(|l| {
                let meta = ScaleMeta::for_level(base, l, levels);
                let coords: Vec<_> = (0..meta.shape.volume())
                    .filter(|i| density_mod > 0 && i % density_mod == 0)
                    .map(|i| meta.shape.coord_of(i))
                    .collect();
                let feats = rng.uniform(coords.len() * c, -1.0, 1.0);
                (meta, SparseVoxelTensor::new(meta.shape, c, coords, feats).unwrap())
            })
            .collect();
        FeaturePyramid::new(scales, vec![0.5; levels]).unwrap()
    }

    #[test]
    fn schedule_cycles_coarse_to_fine() {
        assert_eq!(layer_schedule(9, 4), vec![3, 2, 1, 0, 3, 2, 1, 0, 3]);
        assert_eq!(layer_schedule(2, 1), vec![0, 0]);
    }

    #[test]
    fn single_layer_single_scale_is_filter_then_decode() {
        let mut rng = ParamRng::new(1);
        let p = pyramid(1, 4, 3, &mut rng);
        let params = HeadParams::seeded(4, 5, 3, 1, 1, &mut rng);
        let cfg = HeadConfig { layers: 1, threshold: 0.5 };
        let out = run_head(&p, &params, &cfg).unwrap();

        let (_, t) = p.scale(0);
        let f = occupancy_filter(t, &params.filters[0], &params.empty_token, 0.5).unwrap();
        let dense = densify_with_fill(&f.kept, &f.empty_token).unwrap();
        let (q, _) = update_queries(&QuerySet::new(params.queries.clone()), None, &dense, &params.attention[0]).unwrap();
        let (pred, _) = decode_queries(&q, &f, &params.class_head).unwrap();
        assert_eq!(out.final_prediction(), &pred);
    }

    #[test]
    fn empty_pyramid_gives_empty_grid() {
        let mut rng = ParamRng::new(2);
        let p = pyramid(3, 4, 0, &mut rng);
        let params = HeadParams::seeded(4, 6, 2, 3, 4, &mut rng);
        let out = run_head(&p, &params, &HeadConfig { layers: 4, threshold: 0.5 }).unwrap();
        let pred = out.final_prediction();
        assert_eq!(pred.occ_masks.cols(), 0);
        let grid = assemble_occupancy(pred, p.scale(0).0.shape).unwrap();
        assert_eq!(grid.occupied(), 0);
        assert!(out.queries.is_finite());
    }

    #[test]
    fn deterministic_and_counted() {
        let run = || {
            let mut rng = ParamRng::new(3);
            let p = pyramid(3, 6, 2, &mut rng);
            let params = HeadParams::seeded(6, 4, 3, 3, 5, &mut rng);
            run_head(&p, &params, &HeadConfig { layers: 5, threshold: 0.5 }).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b);
        assert_eq!(a.predictions.len(), 5);
        assert_eq!(a.schedule, vec![2, 1, 0, 2, 1]);
        let decode = a.ledger.get(Stage::HeadDecode);
        let n_l = a.finest.kept_len() as u64;
        let hwd = 8 * 8 * 4;
        assert_eq!(decode.sparse, 5 * (n_l * 4 * 6 + 4 * 6) + 4 * hwd);
        assert_eq!(decode.dense, 5 * hwd * 4 * 6);
    }

    #[test]
    fn rejects_missing_parameters() {
        let mut rng = ParamRng::new(4);
        let p = pyramid(2, 4, 2, &mut rng);
        let params = HeadParams::seeded(4, 2, 2, 2, 1, &mut rng);
        assert!(run_head(&p, &params, &HeadConfig { layers: 3, threshold: 0.5 }).is_err());
        let params = HeadParams::seeded(4, 2, 2, 1, 3, &mut rng);
        assert!(run_head(&p, &params, &HeadConfig { layers: 3, threshold: 0.5 }).is_err());
    }
}
