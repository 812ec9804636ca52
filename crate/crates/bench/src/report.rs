//! JSON run reports.
//!
//! Every key is always present regardless of configuration. Counts are
//! multiply-accumulates (one MAC is two FLOPs). Wall-clock values live only
//! under the top-level `timing` object, so two runs with the same seed
//! produce identical documents once `timing` is removed.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sparseocc_core::flops::MacCount;
use sparseocc_core::pipeline::{PipelineConfig, PipelineOutput};

use crate::error::BenchError;

pub const SCHEMA_VERSION: u32 = 1;

/// Published FLOPs reduction of the complete camera-to-occupancy model over
/// its dense counterpart.
pub const PUBLISHED_FULL_MODEL_REDUCTION: f64 = 0.749;

pub const REFERENCE_NOTE: &str = "The published reduction covers the complete camera model, including 2D image \
encoding and view transformation, which this pipeline does not implement. It is context for encoder.reduction, \
not a target.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub mac_convention: String,
    pub config: ConfigEcho,
    pub scene: SceneStats,
    pub stages: Vec<StageMacs>,
    pub scales: Vec<ScaleEntry>,
    pub encoder: Ratio,
    pub head: HeadEntry,
    pub total: Ratio,
    pub reference: Reference,
    pub output: OutputStats,
    pub peak_bytes_estimate: u64,
    pub timing: Timing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub shape: [usize; 3],
    pub channels: usize,
    pub decoder_channels: usize,
    pub levels: usize,
    pub kernel: usize,
    pub queries: usize,
    pub head_layers: usize,
    pub classes: usize,
    pub seed: u64,
    pub density: f64,
    pub leaky_slope: f32,
    pub filter_threshold: f32,
}

impl From<&PipelineConfig> for ConfigEcho {
    fn from(c: &PipelineConfig) -> Self {
        Self {
            shape: c.shape.dims(),
            channels: c.channels,
            decoder_channels: c.decoder_channels,
            levels: c.levels,
            kernel: c.kernel,
            queries: c.queries,
            head_layers: c.head_layers,
            classes: c.classes,
            seed: c.seed,
            density: c.density,
            leaky_slope: c.leaky_slope,
            filter_threshold: c.filter_threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneStats {
    pub active: usize,
    pub occupancy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageMacs {
    pub name: String,
    pub sparse_macs: u64,
    pub dense_macs: u64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleEntry {
    pub level: usize,
    pub shape: [usize; 3],
    pub collapsed: bool,
    pub active: usize,
    pub occupancy: f64,
}

/// Sparse against dense-equivalent MACs; `reduction = 1 - ratio`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    pub sparse_macs: u64,
    pub dense_macs: u64,
    pub ratio: f64,
    pub reduction: f64,
}

impl From<MacCount> for Ratio {
    fn from(m: MacCount) -> Self {
        Self { sparse_macs: m.sparse, dense_macs: m.dense, ratio: m.ratio(), reduction: 1.0 - m.ratio() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadEntry {
    /// Kept voxels of the finest scale.
    pub kept: usize,
    pub volume: usize,
    /// One decode-plus-reconstruct pass.
    pub decode_sparse_macs: u64,
    pub decode_dense_macs: u64,
    pub decode_ratio: f64,
    /// `kept / volume + 1 / (queries * decoder_channels)`.
    pub predicted_ratio: f64,
    /// Sparse decode strictly cheaper than dense whenever `kept < volume`.
    pub inequality_holds: bool,
    pub linear_head_macs: u64,
    pub sparse_head_macs: u64,
    pub dense_head_macs: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub published_full_model_reduction: f64,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputStats {
    pub occupied: usize,
    /// Voxel count per label, index 0 is empty.
    pub label_histogram: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct StageTime {
    pub name: String,
    pub ms: f64,
}

/// Wall-clock measurements; hardware dependent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Timing {
    pub stages: Vec<StageTime>,
    /// Sum of the encoder stages.
    pub latency_3d_ms: f64,
    /// Whole forward pass.
    pub latency_overall_ms: f64,
}

/// Assembles the report from a finished run.
pub fn count_flops(cfg: &PipelineConfig, scene_active: usize, out: &PipelineOutput, timing: Timing) -> Report {
    let stages = out
        .ledger
        .entries()
        .iter()
        .map(|(s, m)| StageMacs { name: s.to_string(), sparse_macs: m.sparse, dense_macs: m.dense, ratio: m.ratio() })
        .collect();
    let scales = out
        .scales
        .iter()
        .map(|s| ScaleEntry {
            level: s.level,
            shape: s.shape.dims(),
            collapsed: s.collapsed,
            active: s.active,
            occupancy: s.occupancy,
        })
        .collect();
    let hc = &out.head_check;
    let mut histogram = vec![0usize; cfg.classes + 1];
    for &l in &out.grid.labels {
        histogram[l as usize] += 1;
    }
    Report {
        schema_version: SCHEMA_VERSION,
        mac_convention: "1 MAC = 2 FLOPs".into(),
        config: cfg.into(),
        scene: SceneStats { active: scene_active, occupancy: scene_active as f64 / cfg.shape.volume() as f64 },
        stages,
        scales,
        encoder: out.encoder_macs().into(),
        head: HeadEntry {
            kept: hc.kept,
            volume: hc.volume,
            decode_sparse_macs: hc.measured.sparse,
            decode_dense_macs: hc.measured.dense,
            decode_ratio: hc.measured.ratio(),
            predicted_ratio: hc.predicted_ratio(),
            inequality_holds: hc.inequality_holds(),
            linear_head_macs: out.head_macs.linear,
            sparse_head_macs: out.head_macs.sparse,
            dense_head_macs: out.head_macs.dense,
        },
        total: out.ledger.total().into(),
        reference: Reference {
            published_full_model_reduction: PUBLISHED_FULL_MODEL_REDUCTION,
            note: REFERENCE_NOTE.into(),
        },
        output: OutputStats { occupied: out.grid.occupied(), label_histogram: histogram },
        peak_bytes_estimate: out.peak_bytes as u64,
        timing,
    }
}

pub fn to_json(report: &Report) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report is plain data");
    s.push('\n');
    s
}

pub fn emit_report(report: &Report, path: &Path) -> Result<(), BenchError> {
    std::fs::write(path, to_json(report)).map_err(|e| BenchError::io(path, e))
}

pub fn read_report(path: &Path) -> Result<Report, BenchError> {
    let text = std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| BenchError::Format { path: path.into(), msg: e.to_string() })
}
