//! Seeded end-to-end model: diffuser pyramid, fusion, sparse head, assembly.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::flops::{MacCount, MacLedger, NoProbe, Probe, Stage};
use crate::head::{assemble_occupancy, assembly_macs, run_head_probed, HeadConfig, HeadParams, MaskPrediction, OccupancyGrid};
use crate::init::ParamRng;
use crate::matching::MatchWeights;
use crate::oracle::linear_head_macs;
use crate::pyramid::{build_pyramid_probed, fuse_scales_counted, is_collapsed, PyramidParams};
use crate::spconv::{Activation, DEFAULT_LEAKY_SLOPE};
use crate::tensor::{GridShape, SparseVoxelTensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub shape: GridShape,
    /// Encoder width; scene features must have this many channels.
    pub channels: usize,
    pub decoder_channels: usize,
    pub levels: usize,
    /// Decomposed kernel extent on 3D levels.
    pub kernel: usize,
    pub queries: usize,
    pub head_layers: usize,
    /// Semantic classes, excluding empty.
    pub classes: usize,
    pub seed: u64,
    /// Target active fraction of generated scenes.
    pub density: f64,
    pub weights: MatchWeights,
    pub sample_points: usize,
    pub leaky_slope: f32,
    pub filter_threshold: f32,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            shape: GridShape { h: 128, w: 128, d: 16 },
            channels: 128,
            decoder_channels: 192,
            levels: 4,
            kernel: 3,
            queries: 100,
            head_layers: 9,
            classes: 16,
            seed: 0,
            density: 0.2,
            weights: MatchWeights::default(),
            sample_points: 50176,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            filter_threshold: 0.5,
        }
    }
}

impl PipelineConfig {
    /// Checks positivity, kernel parity, density range and that every scale
    /// divides the base grid exactly (attention masks are max-pooled across scales).
    pub fn validate(&self) -> Result<()> {
        let s = self.shape;
        if s.h == 0 || s.w == 0 || s.d == 0 {
            return Err(Error::EmptyDimension("grid extent"));
        }
        for (v, what) in [
            (self.channels, "channels"),
            (self.decoder_channels, "decoder_channels"),
            (self.levels, "levels"),
            (self.queries, "queries"),
            (self.head_layers, "head_layers"),
            (self.classes, "classes"),
            (self.sample_points, "sample_points"),
        ] {
            if v == 0 {
                return Err(Error::EmptyDimension(what));
            }
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::InvalidConfig("kernel must be odd"));
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(Error::InvalidConfig("density must be in (0, 1]"));
        }
        if self.classes >= u16::MAX as usize {
            return Err(Error::TooLarge("class count"));
        }
        if !(self.filter_threshold > 0.0 && self.filter_threshold < 1.0) {
            return Err(Error::InvalidConfig("filter_threshold must be in (0, 1)"));
        }
        if !self.leaky_slope.is_finite() || self.leaky_slope < 0.0 {
            return Err(Error::InvalidConfig("leaky_slope must be finite and non-negative"));
        }
        if self.levels > 16 {
            return Err(Error::TooLarge("levels"));
        }
        for l in 1..=self.levels {
            let stride = 1usize << (l - 1);
            let flat = is_collapsed(l, self.levels);
            if !s.h.is_multiple_of(stride) || !s.w.is_multiple_of(stride) || (!flat && !s.d.is_multiple_of(stride)) {
                return Err(Error::InvalidConfig("grid extents must be divisible by every 3D scale stride"));
            }
        }
        Ok(())
    }

    pub fn activation(&self) -> Activation {
        Activation::LeakyRelu(self.leaky_slope)
    }

    pub fn head(&self) -> HeadConfig {
        HeadConfig { layers: self.head_layers, threshold: self.filter_threshold }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: PipelineConfig,
    pub pyramid: PyramidParams,
    pub head: HeadParams,
}

impl Model {
    /// Parameters drawn from `config.seed`; the encoder and head use separate streams.
    pub fn seeded(config: &PipelineConfig) -> Result<Self> {
        config.validate()?;
        let mut root = ParamRng::new(config.seed);
        let mut enc = root.fork(1);
        let mut dec = root.fork(2);
        let pyramid = PyramidParams::seeded(
            config.shape,
            config.levels,
            config.kernel,
            config.channels,
            config.decoder_channels,
            &mut enc,
        )?;
        let head = HeadParams::seeded(
            config.decoder_channels,
            config.queries,
            config.classes,
            config.levels,
            config.head_layers,
            &mut dec,
        );
        Ok(Self { config: *config, pyramid, head })
    }

    pub fn forward(&self, scene: &SparseVoxelTensor) -> Result<PipelineOutput> {
        self.forward_probed(scene, &mut NoProbe)
    }

    pub fn forward_probed(&self, scene: &SparseVoxelTensor, probe: &mut dyn Probe) -> Result<PipelineOutput> {
        let cfg = &self.config;
        if scene.shape() != cfg.shape {
            return Err(Error::InvalidConfig("scene grid does not match the configured shape"));
        }
        if scene.channels() != cfg.channels {
            return Err(Error::ChannelMismatch { expected: cfg.channels, actual: scene.channels() });
        }
        let mut ledger = MacLedger::new();
        let raw = build_pyramid_probed(scene, &self.pyramid, cfg.activation(), &mut ledger, probe)?;

        probe.begin(Stage::Fusion);
        let (fused, m) = fuse_scales_counted(&raw);
        ledger.add(Stage::Fusion, m);
        probe.end(Stage::Fusion);
        let encoder_peak = scene.byte_size() + 2 * raw.byte_size();
        drop(raw);

        let head = run_head_probed(&fused, &self.head, &cfg.head(), probe)?;
        for (stage, count) in head.ledger.entries() {
            ledger.add(*stage, *count);
        }
        let head_peak = fused.byte_size() + head.peak_bytes;

        probe.begin(Stage::Assembly);
        let prediction = head.final_prediction().clone();
        let grid = assemble_occupancy(&prediction, cfg.shape)?;
        ledger.add(Stage::Assembly, assembly_macs(&prediction, cfg.shape));
        probe.end(Stage::Assembly);

        let kept_finest = head.finest.kept_len();
        let scales = fused
            .scales()
            .iter()
            .map(|(meta, t)| ScaleStats {
                level: meta.level,
                shape: meta.shape,
                collapsed: meta.collapsed,
                active: t.len(),
                occupancy: t.occupancy(),
            })
            .collect();
        let hwd = cfg.shape.volume();
        let head_check = HeadComplexity {
            kept: kept_finest,
            volume: hwd,
            queries: cfg.queries,
            channels: cfg.decoder_channels,
            measured: head.decode_pass,
        };
        let head_total = ledger.head_total();
        Ok(PipelineOutput {
            grid,
            ledger,
            scales,
            head_check,
            head_macs: HeadBaselines {
                linear: linear_head_macs(cfg.shape, cfg.decoder_channels, cfg.classes),
                sparse: head_total.sparse,
                dense: head_total.dense,
            },
            peak_bytes: encoder_peak.max(head_peak),
            prediction,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleStats {
    pub level: usize,
    pub shape: GridShape,
    pub collapsed: bool,
    pub active: usize,
    pub occupancy: f64,
}

/// Decode-plus-reconstruct cost against its dense baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadComplexity {
    /// Kept voxels of the finest scale, `N_l`.
    pub kept: usize,
    /// `H W D` of the finest scale.
    pub volume: usize,
    pub queries: usize,
    pub channels: usize,
    pub measured: MacCount,
}

impl HeadComplexity {
    /// `N_l N_q C + N_q C + H W D`.
    pub fn closed_form(&self) -> u64 {
        (self.kept * self.queries * self.channels + self.queries * self.channels + self.volume) as u64
    }

    /// `N_l / (H W D) + 1 / (N_q C)`.
    pub fn predicted_ratio(&self) -> f64 {
        self.kept as f64 / self.volume as f64 + 1.0 / (self.queries * self.channels) as f64
    }

    /// Sparse cost is strictly below dense; required whenever `N_l < H W D`.
    pub fn inequality_holds(&self) -> bool {
        self.kept >= self.volume || self.measured.sparse < self.measured.dense
    }
}

/// Whole-head MACs of three head designs at the same configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadBaselines {
    /// Per-voxel linear classifier over the dense grid.
    pub linear: u64,
    pub sparse: u64,
    /// The same head decoding against every voxel.
    pub dense: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub grid: OccupancyGrid,
    pub ledger: MacLedger,
    pub scales: Vec<ScaleStats>,
    pub head_check: HeadComplexity,
    pub head_macs: HeadBaselines,
    /// Estimated peak bytes of live tensors.
    pub peak_bytes: usize,
    pub prediction: MaskPrediction,
}

impl PipelineOutput {
    /// Sparse 3D stages (diffusers, downsampling, projection, fusion).
    pub fn encoder_macs(&self) -> MacCount {
        self.ledger.encoder_total()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn small() -> PipelineConfig {
        PipelineConfig {
            shape: GridShape::new(8, 8, 4).unwrap(),
            channels: 4,
            decoder_channels: 6,
            levels: 3,
            queries: 5,
            head_layers: 4,
            classes: 3,
            seed: 11,
            ..PipelineConfig::default()
        }
    }

    fn scene(cfg: &PipelineConfig, every: usize) -> SparseVoxelTensor {
        let coords: Vec<_> = (0..cfg.shape.volume()).filter(|i| i % every == 0).map(|i| cfg.shape.coord_of(i)).collect();
        let feats = ParamRng::new(5).uniform(coords.len() * cfg.channels, -1.0, 1.0);
        SparseVoxelTensor::new(cfg.shape, cfg.channels, coords, feats).unwrap()
    }

    #[test]
    fn validation() {
        assert!(PipelineConfig::default().validate().is_ok());
        let bad = PipelineConfig { shape: GridShape::new(10, 8, 4).unwrap(), ..small() };
        assert!(bad.validate().is_err());
        assert!(PipelineConfig { density: 0.0, ..small() }.validate().is_err());
        assert!(PipelineConfig { kernel: 4, ..small() }.validate().is_err());
        // Flat scales do not constrain depth.
        let ok = PipelineConfig { shape: GridShape::new(8, 8, 2).unwrap(), ..small() };
        assert!(ok.validate().is_ok());
    }

    #[test]
    fn deterministic_forward() {
        let cfg = small();
        let s = scene(&cfg, 5);
        let a = Model::seeded(&cfg).unwrap().forward(&s).unwrap();
        let b = Model::seeded(&cfg).unwrap().forward(&s).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.scales.len(), 3);
        assert!(a.head_check.inequality_holds());
        assert_eq!(a.head_check.measured.sparse, a.head_check.closed_form());
        assert!(a.grid.labels.iter().all(|&l| l as usize <= cfg.classes));
    }

    #[test]
    fn empty_scene() {
        let cfg = small();
        let s = SparseVoxelTensor::empty(cfg.shape, cfg.channels).unwrap();
        let out = Model::seeded(&cfg).unwrap().forward(&s).unwrap();
        assert_eq!(out.grid.labels, vec![0; cfg.shape.volume()]);
        assert_eq!(out.encoder_macs().sparse, 0);
    }

    #[test]
    fn scene_must_match_config() {
        let cfg = small();
        let m = Model::seeded(&cfg).unwrap();
        let wrong = SparseVoxelTensor::empty(cfg.shape, cfg.channels + 1).unwrap();
        assert!(m.forward(&wrong).is_err());
    }
}
